use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("no supervision: {0}")]
    NoSupervision(String),

    #[error("finite-difference oracle failed: {0}")]
    OracleFailure(String),

    #[error("unknown token id {id} (vocabulary size {vocab})")]
    Vocabulary { id: usize, vocab: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("degenerate pairs: {0}")]
    DegeneratePairs(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Degenerate(_) => "degenerate_input",
            Error::InvalidTarget(_) => "invalid_target",
            Error::NoSupervision(_) => "no_supervision",
            Error::OracleFailure(_) => "oracle_failure",
            Error::Vocabulary { .. } => "vocabulary",
            Error::Divergence(_) => "divergence",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::DegeneratePairs(_) => "degenerate_pairs",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
