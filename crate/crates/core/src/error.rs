use thiserror::Error;

pub type Result<T> = std::result::Result<T, WaveError>;

#[derive(Debug, Error)]
pub enum WaveError {
    #[error("extent not commensurate with mesh size: {0}")]
    IncommensurateExtent(String),

    #[error("inner region margin too small: {0}")]
    MarginTooSmall(String),

    #[error("coefficient value out of admissible bounds: {0}")]
    ValueOutOfBounds(String),

    #[error("grids do not align: {0}")]
    GridMismatch(String),

    #[error("corrupt or truncated file header: {0}")]
    CorruptHeader(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("time step {tau} violates CFL bound {max_tau}")]
    CflViolation { tau: f64, max_tau: f64 },

    #[error("non-finite field detected at step {step}")]
    NonFiniteField { step: usize },

    #[error("boundary traces not aligned: {0}")]
    TraceMismatch(String),

    #[error("wave histories not aligned: {0}")]
    HistoryMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WaveError {
    /// Process exit code convention: 1 = numerical failure, 2 = I/O or config error.
    pub fn exit_code(&self) -> i32 {
        match self {
            WaveError::CflViolation { .. } | WaveError::NonFiniteField { .. } => 1,
            _ => 2,
        }
    }
}
