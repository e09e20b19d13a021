use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("coupling layer {layer}: non-finite output")]
    NonFinite { layer: usize },

    #[error("coupling layer {layer}: singular scale (|s| = {magnitude:e})")]
    SingularScale { layer: usize, magnitude: f64 },

    #[error("rank deficient: sigma_r/sigma_1 = {ratio:e} at r = {rank}")]
    RankDeficient { rank: usize, ratio: f64 },

    #[error("relative error undefined: reference norm is zero")]
    UndefinedReference,

    #[error("solver failed at step {step}: {reason}")]
    Solver { step: usize, reason: String },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Coarse category used by the command-line front end to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::Usage(_) | Error::Shape(_) => ErrorKind::Config,
            Error::Io(_) | Error::Csv(_) | Error::Parse(_) => ErrorKind::Io,
            Error::Sample { source, .. } => source.kind(),
            _ => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
    Io,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
