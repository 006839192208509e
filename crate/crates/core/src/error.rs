use thiserror::Error;

/// Errors raised by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A configuration is inconsistent with itself or with the data.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("path {index} at (delay {delay}, doppler {doppler}) lies outside the region of interest")]
    OutOfRegion { index: usize, delay: f64, doppler: f64 },

    #[error("cell ({row}, {col}) holds {count} paths but capacity is {capacity}")]
    CellOverflow {
        row: usize,
        col: usize,
        count: usize,
        capacity: usize,
    },

    /// Two basis atoms are numerically identical.
    #[error("paths {first} and {second} are collinear; gains are not identifiable")]
    RankDeficient { first: usize, second: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    /// Iteration produced non-finite values or could not be stabilized.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A persisted artifact is malformed.
    #[error("data error: {0}")]
    Data(#[from] DataError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures while decoding dataset or checkpoint containers.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch")]
    Checksum,
    #[error("malformed content: {0}")]
    Malformed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
