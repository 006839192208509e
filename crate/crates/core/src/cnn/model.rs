//! Network definition: stride-2 CBA encoder, spatial pyramid pooling and a
//! channel-reducing CBA head ending in a sigmoid output layer.

use ndarray::{Array1, Array3, Array4, ArrayD, Axis, Ix1, Ix4};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    batchnorm_backward, batchnorm_backward_frozen, batchnorm_forward, conv2d_backward, conv2d_forward,
    relu, relu_backward, sigmoid, spp_backward, spp_forward, BnCache, BN_MOMENTUM,
};
use crate::encoding::{CellGridSpec, EncodedLabel};
use crate::error::{Error, Result};
use crate::preprocess::CnnInput;
use crate::rng::substream;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `2·N_W`.
    pub input_channels: usize,
    /// Input height and width (square inputs).
    pub input_hw: usize,
    /// Channels after the first encoder block; doubled by each later block.
    pub base_channels: usize,
    pub n_encoder_blocks: usize,
    pub spp_kernels: Vec<usize>,
    /// Widths of the stride-1 CBA blocks between SPP and the output layer.
    pub head_channels: Vec<usize>,
    pub cell_spec: CellGridSpec,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.cell_spec.validate()?;
        if self.input_channels == 0 || self.base_channels == 0 || self.n_encoder_blocks == 0 {
            return Err(Error::Config("channel counts and encoder depth must be positive".into()));
        }
        let factor = 1usize << self.n_encoder_blocks;
        if self.input_hw % factor != 0 {
            return Err(Error::Config(format!(
                "input size {} is not divisible by 2^{}",
                self.input_hw, self.n_encoder_blocks
            )));
        }
        let cells = self.input_hw / factor;
        if cells != self.cell_spec.rows || cells != self.cell_spec.cols {
            return Err(Error::Config(format!(
                "encoder output {cells}x{cells} does not match the {}x{} cell grid",
                self.cell_spec.rows, self.cell_spec.cols
            )));
        }
        if self.cell_spec.region.height != self.input_hw || self.cell_spec.region.width != self.input_hw {
            return Err(Error::Config("region supports must equal the network input size".into()));
        }
        if self.spp_kernels.iter().any(|&k| k < 3 || k % 2 == 0) {
            return Err(Error::Config("SPP kernels must be odd and >= 3".into()));
        }
        if self.head_channels.contains(&0) {
            return Err(Error::Config("head widths must be positive".into()));
        }
        Ok(())
    }

    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.n_encoder_blocks).map(|b| self.base_channels << b).collect()
    }

    pub fn output_channels(&self) -> usize {
        self.cell_spec.depth()
    }
}

/// One named tensor of the model state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub value: ArrayD<T>,
    /// Running statistics are state, not trainable.
    pub trainable: bool,
}

/// Ordered model state: kernels, biases and batch-norm affine/running terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real> {
    pub entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn vec(&self, i: usize) -> Array1<T> {
        self.entries[i].value.clone().into_dimensionality::<Ix1>().expect("vector parameter")
    }

    fn kernel(&self, i: usize) -> Array4<T> {
        self.entries[i].value.clone().into_dimensionality::<Ix4>().expect("kernel parameter")
    }
}

#[derive(Debug, Clone, Copy)]
struct CbaLayer {
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
    stride: usize,
}

#[derive(Debug, Clone, Copy)]
struct OutputLayer {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated by the caller.
    Train,
    /// Frozen running statistics.
    Eval,
}

struct BlockTape<T: Real> {
    input: Array4<T>,
    bn: BnCache<T>,
    out: Array4<T>,
}

/// Intermediate values kept for the backward pass.
pub struct Tape<T: Real> {
    mode: Mode,
    encoder: Vec<BlockTape<T>>,
    spp_channels: usize,
    spp_args: Vec<Vec<usize>>,
    head: Vec<BlockTape<T>>,
    output_input: Array4<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    encoder: Vec<CbaLayer>,
    head: Vec<CbaLayer>,
    output: OutputLayer,
}

fn push<T: Real>(entries: &mut Vec<ParamEntry<T>>, name: String, value: ArrayD<T>, trainable: bool) -> usize {
    entries.push(ParamEntry { name, value, trainable });
    entries.len() - 1
}

fn he_kernel<T: Real>(cout: usize, cin: usize, gain: f64, seed: u64, layer: u64) -> ArrayD<T> {
    let std = (gain / (cin * 9) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = substream(seed, &[0x1A7E_u64, layer]);
    Array4::from_shape_simple_fn((cout, cin, 3, 3), || lit::<T>(normal.sample(&mut rng))).into_dyn()
}

impl<T: Real> Model<T> {
    /// Fresh model with He-normal kernels, zero biases, unit BN scale.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut entries = Vec::new();
        let mut layer_id = 0u64;
        let mut cba = |entries: &mut Vec<ParamEntry<T>>, prefix: String, cin: usize, cout: usize, stride: usize| {
            layer_id += 1;
            let weight = push(entries, format!("{prefix}.conv.weight"), he_kernel::<T>(cout, cin, 2.0, config.seed, layer_id), true);
            let bias = push(entries, format!("{prefix}.conv.bias"), ArrayD::zeros(vec![cout]), true);
            let gamma = push(entries, format!("{prefix}.bn.weight"), ArrayD::ones(vec![cout]), true);
            let beta = push(entries, format!("{prefix}.bn.bias"), ArrayD::zeros(vec![cout]), true);
            let running_mean = push(entries, format!("{prefix}.bn.running_mean"), ArrayD::zeros(vec![cout]), false);
            let running_var = push(entries, format!("{prefix}.bn.running_var"), ArrayD::ones(vec![cout]), false);
            CbaLayer { weight, bias, gamma, beta, running_mean, running_var, stride }
        };
        let mut cin = config.input_channels;
        let mut encoder = Vec::new();
        for (b, cout) in config.encoder_channels().into_iter().enumerate() {
            encoder.push(cba(&mut entries, format!("encoder.{b}"), cin, cout, 2));
            cin = cout;
        }
        cin *= config.spp_kernels.len() + 1;
        let mut head = Vec::new();
        for (b, &cout) in config.head_channels.iter().enumerate() {
            head.push(cba(&mut entries, format!("head.{b}"), cin, cout, 1));
            cin = cout;
        }
        let cout = config.output_channels();
        let weight = push(&mut entries, "output.conv.weight".into(), he_kernel::<T>(cout, cin, 1.0, config.seed, 0xFFFF), true);
        let bias = push(&mut entries, "output.conv.bias".into(), ArrayD::zeros(vec![cout]), true);
        Ok(Self { config, params: ModelParams { entries }, encoder, head, output: OutputLayer { weight, bias } })
    }

    /// Rebuilds a model around loaded parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        let mut model = Self::new(config)?;
        if params.entries.len() != model.params.entries.len() {
            return Err(Error::Config("parameter count does not match the model configuration".into()));
        }
        for (want, got) in model.params.entries.iter().zip(&params.entries) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Config(format!("parameter {} does not match configuration", got.name)));
            }
        }
        model.params = params;
        Ok(model)
    }

    fn cba_forward(&self, layer: &CbaLayer, x: &Array4<T>, mode: Mode) -> Result<BlockTape<T>> {
        let p = &self.params;
        let z = conv2d_forward(x, &p.kernel(layer.weight), &p.vec(layer.bias), layer.stride)?;
        let running = (p.vec(layer.running_mean), p.vec(layer.running_var));
        let (y, bn) = batchnorm_forward(
            &z,
            &p.vec(layer.gamma),
            &p.vec(layer.beta),
            if mode == Mode::Eval { Some((&running.0, &running.1)) } else { None },
        );
        Ok(BlockTape { input: x.clone(), bn, out: relu(&y) })
    }

    /// Forward pass on a batch `N × 2N_W × H × W`, returning sigmoid
    /// probabilities `N × 3C × I × J`.
    pub fn forward_batch(&self, x: &Array4<T>, mode: Mode) -> Result<(Array4<T>, Tape<T>)> {
        let (_, c, h, w) = x.dim();
        if c != self.config.input_channels || h != self.config.input_hw || w != self.config.input_hw {
            return Err(Error::Config(format!(
                "input {c}x{h}x{w} does not match model {}x{}x{}",
                self.config.input_channels, self.config.input_hw, self.config.input_hw
            )));
        }
        let mut cur = x.clone();
        let mut enc = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let t = self.cba_forward(layer, &cur, mode)?;
            cur = t.out.clone();
            enc.push(t);
        }
        let spp_channels = cur.dim().1;
        let (pooled, spp_args) = spp_forward(&cur, &self.config.spp_kernels);
        cur = pooled;
        let mut head = Vec::with_capacity(self.head.len());
        for layer in &self.head {
            let t = self.cba_forward(layer, &cur, mode)?;
            cur = t.out.clone();
            head.push(t);
        }
        let p = &self.params;
        let logits = conv2d_forward(&cur, &p.kernel(self.output.weight), &p.vec(self.output.bias), 1)?;
        let lo = T::epsilon();
        let hi = T::one() - T::epsilon();
        let probs = logits.mapv(|z| sigmoid(z).max(lo).min(hi));
        Ok((probs, Tape { mode, encoder: enc, spp_channels, spp_args, head, output_input: cur }))
    }

    /// Gradients of every parameter given `∂L/∂logits`; running statistics
    /// receive zero gradients.
    pub fn backward(&self, tape: &Tape<T>, d_logits: &Array4<T>) -> Vec<ArrayD<T>> {
        let p = &self.params;
        let mut grads: Vec<ArrayD<T>> = p.entries.iter().map(|e| ArrayD::zeros(e.value.raw_dim())).collect();
        let (mut d, dw, db) = conv2d_backward(&tape.output_input, &p.kernel(self.output.weight), d_logits, 1);
        grads[self.output.weight] = dw.into_dyn();
        grads[self.output.bias] = db.into_dyn();
        for (layer, t) in self.head.iter().zip(&tape.head).rev() {
            d = self.cba_backward(layer, t, &d, tape.mode, &mut grads);
        }
        d = spp_backward(&d, tape.spp_channels, &tape.spp_args);
        for (layer, t) in self.encoder.iter().zip(&tape.encoder).rev() {
            d = self.cba_backward(layer, t, &d, tape.mode, &mut grads);
        }
        grads
    }

    fn cba_backward(&self, layer: &CbaLayer, t: &BlockTape<T>, dy: &Array4<T>, mode: Mode, grads: &mut [ArrayD<T>]) -> Array4<T> {
        let p = &self.params;
        let dz = relu_backward(dy, &t.out);
        let gamma = p.vec(layer.gamma);
        let (dconv, dgamma, dbeta) = match mode {
            Mode::Train => batchnorm_backward(&dz, &gamma, &t.bn),
            Mode::Eval => batchnorm_backward_frozen(&dz, &gamma, &t.bn),
        };
        let (dx, dw, db) = conv2d_backward(&t.input, &p.kernel(layer.weight), &dconv, layer.stride);
        grads[layer.weight] = dw.into_dyn();
        grads[layer.bias] = db.into_dyn();
        grads[layer.gamma] = dgamma.into_dyn();
        grads[layer.beta] = dbeta.into_dyn();
        dx
    }

    /// Folds the batch statistics of a training-mode tape into the running
    /// estimates (momentum 0.1).
    pub fn update_running_stats(&mut self, tape: &Tape<T>) {
        let m = lit::<T>(BN_MOMENTUM);
        let keep = T::one() - m;
        let layers: Vec<CbaLayer> = self.encoder.iter().chain(&self.head).copied().collect();
        for (layer, t) in layers.iter().zip(tape.encoder.iter().chain(&tape.head)) {
            if let Some((mean, var)) = &t.bn.batch_stats {
                let rm = &mut self.params.entries[layer.running_mean].value;
                ndarray::Zip::from(rm).and(mean.view().into_dyn()).for_each(|r, &b| *r = keep * *r + m * b);
                let rv = &mut self.params.entries[layer.running_var].value;
                ndarray::Zip::from(rv).and(var.view().into_dyn()).for_each(|r, &b| *r = keep * *r + m * b);
            }
        }
    }

    /// Evaluation-mode prediction for one preprocessed input.
    pub fn forward(&self, input: &CnnInput<T>) -> Result<EncodedLabel<T>> {
        let x = input.tensor.clone().insert_axis(Axis(0));
        let (probs, _) = self.forward_batch(&x, Mode::Eval)?;
        Ok(chw_to_label(probs.index_axis(Axis(0), 0).to_owned()))
    }
}

/// `3C × I × J` network layout to an `I × J × 3C` label.
pub fn chw_to_label<T: Real>(chw: Array3<T>) -> EncodedLabel<T> {
    EncodedLabel { tensor: chw.permuted_axes([1, 2, 0]).as_standard_layout().to_owned() }
}

/// `I × J × 3C` label to the network's `3C × I × J` layout.
pub fn label_to_chw<T: Real>(label: &EncodedLabel<T>) -> Array3<T> {
    label.tensor.view().permuted_axes([2, 0, 1]).as_standard_layout().to_owned()
}
