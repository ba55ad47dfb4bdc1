use std::path::PathBuf;

use crate::autodiff;

/// Errors raised above the autodiff layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] autodiff::Error),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {term}")]
    NonFinite { term: String },
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("no stored episode has length >= {required}")]
    NoLongEpisode { required: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("action out of range: {0:?}")]
    ActionOutOfRange([f64; 2]),
    #[error("invalid curriculum stage {0} (expected 1, 2 or 3)")]
    InvalidStage(u32),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("{streak} consecutive non-finite updates; see {}", diagnostics.display())]
    Diverged { streak: usize, diagnostics: PathBuf },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures caused by numerics rather than by input or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::Autodiff(autodiff::Error::NonFinite(_))
        )
    }

    /// Failures caused by bad input: configuration, scenario or report
    /// files, or checkpoints that do not fit.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::InvalidStage(_)
                | Error::InvalidScenario(_)
                | Error::Incompatible(_)
                | Error::Empty(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
