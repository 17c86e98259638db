use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient in parameter table `{table}` at element {index}")]
    NonFiniteGradient { table: String, index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("backward called on a tape that was already consumed")]
    TapeConsumed,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("attention map capture was not enabled for this forward pass")]
    CaptureDisabled,

    #[error("unknown modality `{0}`")]
    UnknownModality(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    /// True for errors caused by bad user configuration rather than runtime
    /// failure. The CLI maps these to exit code 2.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::UnknownModality(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
