use covsteer_conic::ConicError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite Jacobian at step {t}")]
    DegenerateLinearization { t: usize },
    #[error("rollout diverged at step {t}")]
    Divergence { t: usize },
    #[error("obstacle {obstacle}: gradient vanishes at step {t} (nominal point at obstacle center)")]
    DegenerateGradient { obstacle: usize, t: usize },
    #[error("probability {0} outside (0, 1)")]
    Domain(f64),
    #[error("covariance not PSD along constraint normal (aᵀΣa = {0})")]
    PsdViolation(f64),
    #[error("non-finite cost Hessian at step {t}")]
    Expansion { t: usize },
    #[error("mean boundary conditions unreachable (KKT residual {residual:e})")]
    InfeasibleMean { residual: f64 },
    #[error("covariance subproblem infeasible")]
    InfeasibleCovariance,
    #[error("single-program baseline infeasible")]
    InfeasibleBaseline,
    #[error("singular covariance at step {t} during gain recovery")]
    Recovery { t: usize },
    #[error("trajectory dynamically inconsistent (max defect {defect:e})")]
    InconsistentTrajectory { defect: f64 },
    #[error("inner iteration {iteration}: {source}")]
    Inner { iteration: usize, source: Box<Error> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

impl Error {
    /// The underlying error with iteration context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Inner { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether the error certifies an empty feasible set rather than a
    /// numerical breakdown.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self.root(),
            Error::InfeasibleMean { .. } | Error::InfeasibleCovariance | Error::InfeasibleBaseline
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
