use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value out of domain: {0}")]
    OutOfDomain(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("zero variance: criterion undefined")]
    ZeroVariance,

    #[error("no crossing found in {0}")]
    NoCrossing(String),

    #[error("class {class} received only {count} samples (need at least {required})")]
    InsufficientSamples {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::OutOfDomain(_) => "out_of_domain",
            Error::Divergence { .. } => "divergence",
            Error::ZeroVariance => "zero_variance",
            Error::NoCrossing(_) => "no_crossing",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::Empty(_) => "empty",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, err: impl FnOnce() -> Error) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(err())
    }
}
