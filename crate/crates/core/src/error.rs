use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PnnError>;

#[derive(Debug, Error)]
pub enum PnnError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigensolver did not converge within {max_iter} sweeps (n = {n})")]
    NonConvergence { n: usize, max_iter: usize },

    /// An eigenvalue left the domain of a logarithm or inverse.
    #[error("domain error: eigenvalue {index} shifted to {value:e} is not positive")]
    Domain { index: usize, value: f64 },

    #[error("singular matrix: eigenvalue {value:e} after ridge; use a larger ridge")]
    Singular { value: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("solver diverged at iteration {iteration}: objective {value}")]
    Divergence { iteration: usize, value: f64 },

    #[error("non-finite value in {0}")]
    Numerical(String),

    #[error("degenerate regression signal (zero variance)")]
    DegenerateSignal,

    #[error("{path}: parse error at row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("training failed at epoch {epoch}, {step}: {source}")]
    Training {
        epoch: usize,
        step: &'static str,
        #[source]
        source: Box<PnnError>,
    },
}

impl PnnError {
    pub fn arg(msg: impl Into<String>) -> Self {
        PnnError::Argument(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        PnnError::Dimension(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PnnError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name, used for CLI exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            PnnError::Argument(_) | PnnError::Dimension(_) => "argument",
            PnnError::Parse { .. } | PnnError::Format(_) => "input",
            PnnError::Io { .. } => "io",
            PnnError::Training { .. } | PnnError::Divergence { .. } => "training",
            _ => "numerical",
        }
    }
}
