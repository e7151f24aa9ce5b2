use std::path::PathBuf;
use thiserror::Error;

/// Process exit codes. The numeric values are a stable contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Infeasible = 2,
    Numeric = 3,
    BadInput = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Schema or semantic violation at a JSON pointer (`""` is the root).
    #[error("{}: {message}", if pointer.is_empty() { "(root)" } else { pointer.as_str() })]
    Spec { pointer: String, message: String },
    #[error("{0}")]
    Artifact(String),
    /// A control law that does not fit the scenario.
    #[error("law does not fit the scenario: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] covsteer::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn spec(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Spec {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit(&self) -> Exit {
        match self {
            CliError::Core(e) => core_exit(e),
            CliError::Mismatch(_) => Exit::Infeasible,
            _ => Exit::BadInput,
        }
    }
}

pub fn core_exit(e: &covsteer::Error) -> Exit {
    use covsteer::Error as E;
    if e.is_infeasibility() {
        return Exit::Infeasible;
    }
    match e.root() {
        E::Config(_)
        | E::Dimension(_)
        | E::Domain(_)
        | E::InconsistentTrajectory { .. }
        | E::DegenerateGradient { .. } => Exit::BadInput,
        _ => Exit::Numeric,
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
