use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate vector: norm {norm:e} below {eps:e}")]
    DegenerateVector { norm: f64, eps: f64 },

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    Vocabulary { id: u32, vocab: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("cannot standardize {width}x{height} frame to {target_w}x{target_h}: {reason}")]
    Standardization {
        width: usize,
        height: usize,
        target_w: usize,
        target_h: usize,
        reason: String,
    },

    #[error("shot of {length:.3}s is shorter than the {window:.3}s window")]
    PruningContract { length: f64, window: f64 },

    #[error("degenerate split: class {class} has no training samples")]
    DegenerateSplit { class: usize },

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("provider failure: {0}")]
    Provider(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// Short machine-readable label for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Domain(_) => "domain",
            Error::DegenerateVector { .. } => "degenerate-vector",
            Error::Instability(_) => "instability",
            Error::Vocabulary { .. } => "vocabulary",
            Error::Contract(_) => "contract",
            Error::Standardization { .. } => "standardization",
            Error::PruningContract { .. } => "pruning-contract",
            Error::DegenerateSplit { .. } => "degenerate-split",
            Error::Divergence { .. } => "divergence",
            Error::UnknownStrategy { .. } => "unknown-strategy",
            Error::Provider(_) => "provider",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
