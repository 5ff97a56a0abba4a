use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("correction matrix component {value:e} at index {index} is below the floor {floor:e}")]
    CorrectionFloor { index: usize, value: f64, floor: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("operator is not contractive: spectral norm {0}")]
    NotContractive(f64),

    #[error("ill-conditioned system: condition number {0:e}")]
    IllConditioned(f64),

    #[error("singular system: {0}")]
    Singular(&'static str),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Short machine-readable tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidConfig(_) => "invalid_config",
            Error::CorrectionFloor { .. } => "correction_floor",
            Error::Empty(_) => "empty",
            Error::NotContractive(_) => "not_contractive",
            Error::IllConditioned(_) => "ill_conditioned",
            Error::Singular(_) => "singular",
            Error::Round { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
