//! Chance-constrained covariance steering for nonlinear stochastic systems.
//!
//! The solver runs a consensus ADMM scheme on a local convex approximation
//! of the steering problem and re-linearizes it around forward passes of the
//! nonlinear dynamics. Every routine is generic over the scalar (`f32` or
//! `f64`); the aliases at the crate root fix `f64`.

mod assembly;
pub mod blocks;
pub mod chance;
pub mod error;
pub mod eval;
pub mod local;
pub mod models;
pub mod noise;
pub mod scenario;
pub mod solver;

pub use covsteer_conic as conic;
pub use covsteer_conic::Real;
pub use error::{Error, Result};
pub use solver::{Method, Status};

pub type Scenario = scenario::Scenario<f64>;
pub type Boundary = scenario::Boundary<f64>;
pub type Obstacle = chance::Obstacle<f64>;
pub type RiskBudget = chance::RiskBudget<f64>;
pub type ControlLaw = models::ControlLaw<f64>;
pub type NominalTrajectory = models::NominalTrajectory<f64>;
pub type LocalProblem = local::LocalProblem<f64>;
pub type ConsensusState = blocks::ConsensusState<f64>;
pub type SolverConfig = solver::SolverConfig<f64>;
pub type SolveReport = solver::SolveReport<f64>;
pub type MonteCarloReport = eval::MonteCarloReport<f64>;
