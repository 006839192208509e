//! Minibatch training with Adam and per-epoch noise redraw.

use std::fmt::Write as _;

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{batch_loss, batch_loss_grad_logits, LossWeights};
use super::model::{label_to_chw, Mode, Model};
use crate::encoding::{encode, CellGridSpec};
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::rng::substream;
use crate::scalar::{to_f64, Real};
use crate::signal::{add_noise, synthesize_channel, PathSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_size: usize,
    pub val_size: usize,
    #[serde(default)]
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl TrainConfig {
    /// Published hyperparameters: Adam(3e-4, 0.9, 0.999), batch 512,
    /// 100 epochs, 500k training and 1k validation samples.
    pub fn reference() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 512,
            epochs: 100,
            train_size: 500_000,
            val_size: 1000,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for b in [self.beta1, self.beta2] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("Adam beta {b} outside (0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Indexed supply of `(input, label)` pairs in network layout.
pub trait SampleSource<T: Real>: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `index` as seen in `epoch`.
    fn sample(&self, epoch: usize, index: usize) -> Result<(Array3<T>, Array3<T>)>;
}

/// Training pairs synthesized from stored path sets. Noisy scenes get fresh
/// noise each epoch (seeded by `(seed, epoch, index)`); noiseless scenes are
/// preprocessed once.
pub struct SyntheticSource<T: Real> {
    pre: Preprocessor<T>,
    cells: CellGridSpec,
    scenes: Vec<(PathSet<T>, T)>,
    seed: u64,
    redraw_noise: bool,
    cache: Vec<(Array3<T>, Array3<T>)>,
}

impl<T: Real> SyntheticSource<T> {
    /// `redraw_noise = false` freezes one noise realization per sample
    /// (validation sets).
    pub fn new(pre: Preprocessor<T>, cells: CellGridSpec, scenes: Vec<(PathSet<T>, T)>, seed: u64, redraw_noise: bool) -> Result<Self> {
        let mut src = Self { pre, cells, scenes, seed, redraw_noise, cache: Vec::new() };
        if src.scenes.iter().all(|(_, s)| *s == T::zero()) {
            src.cache = (0..src.scenes.len())
                .into_par_iter()
                .map(|i| src.build(0, i))
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(src)
    }

    fn build(&self, epoch: usize, index: usize) -> Result<(Array3<T>, Array3<T>)> {
        let (paths, sigma) = &self.scenes[index];
        let clean = synthesize_channel(paths, &self.pre.grid)?;
        let y = if *sigma > T::zero() {
            let stream_epoch = if self.redraw_noise { epoch as u64 } else { u64::MAX };
            add_noise(&clean, *sigma, &mut substream(self.seed, &[stream_epoch, index as u64]))?
        } else {
            clean
        };
        let input = self.pre.run_matrix(&y)?;
        Ok((input.tensor, label_to_chw(&encode(paths, &self.cells)?)))
    }
}

impl<T: Real> SampleSource<T> for SyntheticSource<T> {
    fn len(&self) -> usize {
        self.scenes.len()
    }

    fn sample(&self, epoch: usize, index: usize) -> Result<(Array3<T>, Array3<T>)> {
        if self.cache.is_empty() {
            self.build(epoch, index)
        } else {
            Ok(self.cache[index].clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub l1: f64,
    pub l2: f64,
}

/// Loss history as CSV (`epoch,train_loss,val_loss,l1,l2`).
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,l1,l2\n");
    for h in history {
        let _ = writeln!(s, "{},{:e},{:e},{:e},{:e}", h.epoch, h.train_loss, h.val_loss, h.l1, h.l2);
    }
    s
}

fn gather<T: Real>(src: &dyn SampleSource<T>, epoch: usize, indices: &[usize]) -> Result<(Array4<T>, Array4<T>)> {
    let pairs: Vec<(Array3<T>, Array3<T>)> = indices
        .par_iter()
        .map(|&i| src.sample(epoch, i))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<_> = pairs.iter().map(|p| p.0.view()).collect();
    let ys: Vec<_> = pairs.iter().map(|p| p.1.view()).collect();
    let x = ndarray::stack(Axis(0), &xs).map_err(|e| Error::Validation(e.to_string()))?;
    let y = ndarray::stack(Axis(0), &ys).map_err(|e| Error::Validation(e.to_string()))?;
    Ok((x, y))
}

fn evaluate<T: Real>(model: &Model<T>, src: &dyn SampleSource<T>, batch: usize, mode: Mode, weights: LossWeights) -> Result<(f64, f64, f64)> {
    let mut acc = (0.0, 0.0, 0.0);
    let idx: Vec<usize> = (0..src.len()).collect();
    for chunk in idx.chunks(batch) {
        let (x, y) = gather(src, 0, chunk)?;
        let (pred, _) = model.forward_batch(&x, mode)?;
        let l = batch_loss(&pred, &y, weights)?;
        let w = chunk.len() as f64;
        acc.0 += to_f64(l.total) * w;
        acc.1 += to_f64(l.l1) * w;
        acc.2 += to_f64(l.l2) * w;
    }
    let n = src.len().max(1) as f64;
    Ok((acc.0 / n, acc.1 / n, acc.2 / n))
}

/// Trains `model` in place. Entry 0 of the history holds the loss of the
/// untrained model; entry `e` the mean minibatch loss of epoch `e`.
pub fn train<T: Real>(
    model: &mut Model<T>,
    cfg: &TrainConfig,
    train_set: &dyn SampleSource<T>,
    val_set: Option<&dyn SampleSource<T>>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let w = cfg.loss_weights;
    let val_loss = |m: &Model<T>| -> Result<f64> {
        match val_set {
            Some(v) if !v.is_empty() => Ok(evaluate(m, v, cfg.batch_size, Mode::Eval, w)?.0),
            _ => Ok(f64::NAN),
        }
    };
    let (l0, l1_0, l2_0) = evaluate(model, train_set, cfg.batch_size, Mode::Train, w)?;
    let first = EpochStats { epoch: 0, train_loss: l0, val_loss: val_loss(model)?, l1: l1_0, l2: l2_0 };
    on_epoch(&first);
    let mut history = vec![first];
    let mut adam = Adam::new(&model.params, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut substream(cfg.seed, &[0x5EED, epoch as u64]));
        let mut acc = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = gather(train_set, epoch, chunk)?;
            let (pred, tape) = model.forward_batch(&x, Mode::Train)?;
            let l = batch_loss(&pred, &y, w)?;
            if !l.total.is_finite() {
                return Err(Error::Numerical(format!("training loss became non-finite in epoch {epoch}")));
            }
            let d_logits = batch_loss_grad_logits(&pred, &y, w)?;
            let grads = model.backward(&tape, &d_logits);
            model.update_running_stats(&tape);
            adam.step(&mut model.params, &grads);
            let n = chunk.len() as f64;
            acc.0 += to_f64(l.total) * n;
            acc.1 += to_f64(l.l1) * n;
            acc.2 += to_f64(l.l2) * n;
        }
        let n = train_set.len() as f64;
        let stats = EpochStats { epoch, train_loss: acc.0 / n, val_loss: val_loss(model)?, l1: acc.1 / n, l2: acc.2 / n };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
