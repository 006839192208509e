//! Joint model-order and delay/Doppler estimation from frequency-time
//! channel snapshots.

pub mod baselines;
pub mod cnn;
pub mod config;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod linalg;
pub mod preprocess;
pub mod refine;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod signal;

pub use error::{DataError, Error, Result};
pub use scalar::Real;

pub type PathSet32 = signal::PathSet<f32>;
pub type PathSet64 = signal::PathSet<f64>;
pub type Snapshot32 = signal::Snapshot<f32>;
pub type Snapshot64 = signal::Snapshot<f64>;
pub type Preprocessor32 = preprocess::Preprocessor<f32>;
pub type Preprocessor64 = preprocess::Preprocessor<f64>;
pub type Model32 = cnn::Model<f32>;
pub type Model64 = cnn::Model<f64>;
pub type ParamVector64 = refine::RealParamVector<f64>;
