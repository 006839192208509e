//! Grid-based CNN estimator of delay/Doppler pairs and model order.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;

pub use adam::Adam;
pub use loss::{batch_loss, loss, LossBreakdown, LossWeights};
pub use model::{Mode, Model, ModelConfig, ModelParams, ParamEntry};
pub use train::{history_csv, train, EpochStats, SampleSource, SyntheticSource, TrainConfig};

use num_complex::Complex;

use crate::baselines::Estimator;
use crate::encoding::{decode, DecodedPaths};
use crate::error::Result;
use crate::preprocess::Preprocessor;
use crate::refine::{blue_gains, refine_from_init, GnConfig};
use crate::scalar::{lit, to_f64, Real};
use crate::signal::{PathSet, Snapshot};

/// Preprocesses `snapshot`, runs the network and keeps slots with `μ ≥ threshold`.
pub fn infer<T: Real>(model: &Model<T>, pre: &Preprocessor<T>, snapshot: &Snapshot<T>, threshold: T) -> Result<DecodedPaths<T>> {
    let label = model.forward(&pre.run(snapshot)?)?;
    Ok(decode(&label, threshold, &model.config.cell_spec))
}

/// The `n` highest-scoring slots regardless of threshold.
pub fn infer_strongest<T: Real>(model: &Model<T>, pre: &Preprocessor<T>, snapshot: &Snapshot<T>, n: usize) -> Result<DecodedPaths<T>> {
    let mut d = infer(model, pre, snapshot, T::neg_infinity())?;
    d.scores.truncate(n);
    d.delays.truncate(n);
    d.dopplers.truncate(n);
    Ok(d)
}

/// How detections are read off the network output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Detection {
    /// Slots with `μ ≥ δ`.
    Threshold(f64),
    /// The given number of highest-scoring slots.
    Strongest(usize),
}

/// Network front-end as an [`Estimator`], optionally followed by
/// Gauss-Newton refinement in 64-bit precision.
pub struct CnnEstimator<T: Real> {
    pub name: String,
    pub model: Model<T>,
    pub pre: Preprocessor<T>,
    pub detection: Detection,
    pub refine: Option<GnConfig>,
}

impl<T: Real> CnnEstimator<T> {
    pub fn detect(&self, snapshot: &Snapshot<f64>) -> Result<DecodedPaths<T>> {
        let data = snapshot.data.mapv(|z| Complex::new(lit::<T>(z.re), lit::<T>(z.im)));
        let snap = Snapshot::new(data, snapshot.grid, lit(snapshot.noise_sigma))?;
        match self.detection {
            Detection::Threshold(delta) => infer(&self.model, &self.pre, &snap, lit(delta)),
            Detection::Strongest(n) => infer_strongest(&self.model, &self.pre, &snap, n),
        }
    }
}

impl<T: Real> Estimator<f64> for CnnEstimator<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, snapshot: &Snapshot<f64>) -> Result<PathSet<f64>> {
        let found = self.detect(snapshot)?;
        if found.is_empty() {
            return Ok(PathSet::empty());
        }
        let taus: Vec<f64> = found.delays.iter().map(|&v| to_f64(v)).collect();
        let alphas: Vec<f64> = found.dopplers.iter().map(|&v| to_f64(v)).collect();
        if let Some(gn) = &self.refine {
            if let Ok((paths, _)) = refine_from_init(&taus, &alphas, snapshot, gn) {
                return Ok(paths);
            }
        }
        let gains = match blue_gains(&taus, &alphas, snapshot) {
            Ok((g, _)) if g.iter().all(|z| z.norm() > 0.0) => g,
            _ => vec![Complex::new(1.0, 0.0); taus.len()],
        };
        PathSet::new(gains, taus, alphas)
    }
}
