use thiserror::Error;

/// Errors produced by the DBSS solvers, generators and metrics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbssError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("starlet depth {n_scales} needs 2^{n_scales} <= {n_samples} samples")]
    ScaleTooDeep { n_scales: usize, n_samples: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("singular per-frequency system at frequency {frequency}")]
    SingularSystem { frequency: usize },

    #[error("degenerate sources: Gram matrix of channel {channel} is singular")]
    DegenerateSources { channel: usize },

    #[error("zero column {column} in mixing matrix (source collapse)")]
    ZeroColumn { column: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid initialization: {0}")]
    InvalidInit(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("non-finite iterate at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("non-finite refinement iterate at iteration {iteration}; try a smaller primal step")]
    StepSize { iteration: usize },

    #[error("zero reference signal")]
    ZeroReference,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DbssError {
    fn from(e: std::io::Error) -> Self {
        DbssError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DbssError>;
