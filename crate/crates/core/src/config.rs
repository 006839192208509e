//! Experiment configuration: one TOML file describing the grid, scene law,
//! preprocessing, network, training, refinement and evaluation protocol.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::SweepConfig;
use crate::cnn::{ModelConfig, TrainConfig};
use crate::encoding::CellGridSpec;
use crate::error::{Error, Result};
use crate::preprocess::{Preprocessor, RegionOfInterest, WindowKind};
use crate::refine::GnConfig;
use crate::scalar::Real;
use crate::scenario::BistaticScenario;
use crate::signal::{SamplingGrid, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSection {
    pub windows: Vec<WindowKind>,
    pub roi: RegionOfInterest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSection {
    pub rows: usize,
    pub cols: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub base_channels: usize,
    pub n_encoder_blocks: usize,
    pub spp_kernels: Vec<usize>,
    pub head_channels: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSection {
    /// SNR points of the MSE sweep.
    pub snr_db: Vec<f64>,
    pub trials: usize,
    /// Single-path scene of the MSE sweep (normalized units).
    pub sweep_delay: f64,
    pub sweep_doppler: f64,
    /// CNN detection threshold used by `infer`.
    pub threshold: f64,
    /// Thresholds compared by the model-order evaluation.
    pub deltas: Vec<f64>,
    pub order_snr_db: Vec<f64>,
    pub order_trials: usize,
    /// Largest order tried by EDC.
    pub p_max: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSection {
    pub geometry: BistaticScenario,
    pub duration_s: f64,
    pub sample_interval_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub grid: SamplingGrid,
    pub scene: SceneConfig,
    pub preprocess: PreprocessSection,
    pub cells: CellSection,
    pub model: ModelSection,
    pub training: TrainConfig,
    pub refinement: GnConfig,
    pub evaluation: EvaluationSection,
    pub scenario: ScenarioSection,
}

impl ExperimentConfig {
    /// Laptop-sized setup: 256×64 grid, 8×128×128 input, 8×8 cells of two
    /// slots, 5000 training scenes.
    pub fn desk_scale() -> Self {
        let roi = RegionOfInterest { delay_min: 0.0, delay_max: 0.025, doppler_min: -0.05, doppler_max: 0.05, height: 128, width: 128 };
        Self {
            name: "desk_scale".into(),
            grid: SamplingGrid::centered(256, 64, 160e6 / 256.0, 64e-6),
            scene: SceneConfig { path_count_range: [1, 4], ..SceneConfig::reference() },
            preprocess: PreprocessSection { windows: WindowKind::default_set(), roi },
            cells: CellSection { rows: 8, cols: 8, capacity: 2 },
            model: ModelSection { base_channels: 8, n_encoder_blocks: 4, spp_kernels: vec![3, 5, 7, 9], head_channels: vec![32, 8], seed: 0 },
            training: TrainConfig { batch_size: 64, epochs: 30, train_size: 5000, val_size: 500, learning_rate: 1e-3, ..TrainConfig::reference() },
            refinement: GnConfig::default(),
            evaluation: EvaluationSection {
                snr_db: vec![0.0, 10.0, 20.0],
                trials: 500,
                sweep_delay: 0.0123,
                sweep_doppler: 0.0171,
                threshold: 0.8,
                deltas: vec![0.5, 0.8],
                order_snr_db: vec![0.0, 10.0, 20.0, 30.0],
                order_trials: 200,
                p_max: 6,
                seed: 0,
            },
            scenario: ScenarioSection { geometry: BistaticScenario::default(), duration_s: 1.0, sample_interval_s: 64.0 * 64e-6 },
        }
    }

    /// Published setup: 1024×100 grid at 160 MHz, 8×256×256 input, 16×16
    /// cells, Adam(3e-4) with batch 512 for 100 epochs on 500k scenes.
    pub fn paper_scale() -> Self {
        let roi = RegionOfInterest { delay_min: 0.0, delay_max: 0.025, doppler_min: -0.05, doppler_max: 0.05, height: 256, width: 256 };
        let desk = Self::desk_scale();
        Self {
            name: "paper_scale".into(),
            grid: SamplingGrid::centered(1024, 100, 160e6 / 1024.0, 64e-6),
            scene: SceneConfig::reference(),
            preprocess: PreprocessSection { windows: WindowKind::default_set(), roi },
            cells: CellSection { rows: 16, cols: 16, capacity: 2 },
            model: ModelSection { base_channels: 16, n_encoder_blocks: 4, spp_kernels: vec![3, 5, 7, 9], head_channels: vec![64, 16], seed: 0 },
            training: TrainConfig::reference(),
            refinement: GnConfig::default(),
            evaluation: EvaluationSection {
                snr_db: (-50..=20).step_by(10).map(f64::from).collect(),
                trials: 10_000,
                order_trials: 1000,
                p_max: 10,
                ..desk.evaluation
            },
            scenario: ScenarioSection { sample_interval_s: 100.0 * 64e-6, ..desk.scenario },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Replaces every seed in the configuration.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene.seed = seed;
        self.model.seed = seed;
        self.training.seed = seed;
        self.evaluation.seed = seed;
        self
    }

    pub fn cell_spec(&self) -> CellGridSpec {
        CellGridSpec { rows: self.cells.rows, cols: self.cells.cols, capacity: self.cells.capacity, region: self.preprocess.roi }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_channels: 2 * self.preprocess.windows.len(),
            input_hw: self.preprocess.roi.height,
            base_channels: self.model.base_channels,
            n_encoder_blocks: self.model.n_encoder_blocks,
            spp_kernels: self.model.spp_kernels.clone(),
            head_channels: self.model.head_channels.clone(),
            cell_spec: self.cell_spec(),
            seed: self.model.seed,
        }
    }

    pub fn preprocessor<T: Real>(&self) -> Result<Preprocessor<T>> {
        Preprocessor::new(self.grid, self.preprocess.roi, self.preprocess.windows.clone())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig { snr_db: self.evaluation.snr_db.clone(), trials: self.evaluation.trials, seed: self.evaluation.seed, gates: None }
    }

    /// Checks every section and their mutual consistency.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) | Error::Validation(m) => Error::Config(m),
            other => other,
        };
        self.grid.validate().map_err(cfg_err)?;
        self.scene.validate().map_err(cfg_err)?;
        self.preprocess.roi.validate().map_err(cfg_err)?;
        if self.preprocess.windows.is_empty() {
            return Err(Error::Config("at least one window is required".into()));
        }
        if self.preprocess.roi.height != self.preprocess.roi.width {
            return Err(Error::Config("the network expects a square region of interest".into()));
        }
        self.model_config().validate().map_err(cfg_err)?;
        self.training.validate()?;
        self.refinement.validate()?;
        let roi = &self.preprocess.roi;
        let [d0, d1] = self.scene.delay_region;
        let [a0, a1] = self.scene.doppler_region;
        if d0 < roi.delay_min || d1 > roi.delay_max || a0 < roi.doppler_min || a1 > roi.doppler_max {
            return Err(Error::Config("scene regions must lie inside the region of interest".into()));
        }
        let ev = &self.evaluation;
        if !roi.contains(ev.sweep_delay, ev.sweep_doppler) {
            return Err(Error::Config("sweep scene lies outside the region of interest".into()));
        }
        if !(ev.threshold > 0.0 && ev.threshold < 1.0) || ev.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(Error::Config("detection thresholds must lie in (0, 1)".into()));
        }
        if ev.trials == 0 || ev.order_trials == 0 || ev.p_max == 0 {
            return Err(Error::Config("trial counts and p_max must be positive".into()));
        }
        self.scenario.geometry.validate().map_err(cfg_err)?;
        if !(self.scenario.duration_s > 0.0 && self.scenario.sample_interval_s > 0.0) {
            return Err(Error::Config("scenario duration and interval must be positive".into()));
        }
        Ok(())
    }

    /// Short digest of the canonical serialization, embedded in artifacts.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("configuration serializes");
        let digest = Sha256::digest(&canon);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
