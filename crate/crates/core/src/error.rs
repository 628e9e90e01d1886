use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Convergence bookkeeping attached to a failed or successful fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub cost: f64,
    pub damping: f64,
    pub gradient_norm: f64,
}

impl std::fmt::Display for FitDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "iterations={} cost={:.6e} damping={:.3e} |grad|={:.3e}",
            self.iterations, self.cost, self.damping, self.gradient_norm
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("numerical drift exceeded tolerance after {applications} channel applications: {detail}")]
    Drift { applications: usize, detail: String },

    #[error("index {index} out of range 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("gate `{0}` is not present in the basis gate set")]
    MissingGate(String),

    #[error("fit did not converge: {reason} ({diagnostics})")]
    FitNonConvergence { reason: String, diagnostics: FitDiagnostics },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("model is not identifiable from the data: {0}")]
    Unidentifiable(String),

    #[error("configuration invalid:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<String>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
