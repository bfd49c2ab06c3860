use std::path::PathBuf;

use thiserror::Error;

use crate::engine::Trace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{}line {line}: {message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        message: String,
    },

    #[error("empty input{}", path.as_ref().map(|p| format!(": {}", p.display())).unwrap_or_default())]
    EmptyInput { path: Option<PathBuf> },

    #[error("diverged at step {step}{}: {what}", node.map(|n| format!(" on node {n}")).unwrap_or_default())]
    Divergence {
        step: usize,
        node: Option<usize>,
        what: String,
        partial: Option<Box<Trace>>,
    },

    #[error("not available: {0}")]
    NotAvailable(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    /// The partial trace carried by a divergence error, if any.
    pub fn partial_trace(&self) -> Option<&Trace> {
        match self {
            Error::Divergence { partial, .. } => partial.as_deref(),
            _ => None,
        }
    }
}
