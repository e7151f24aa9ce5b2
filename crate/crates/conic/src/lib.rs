//! Embedded first-order conic solver.
//!
//! Solves `min ½xᵀPx + cᵀx  s.t.  Ax + s = b, s ∈ K` where `K` is a product
//! of zero, nonnegative, second-order and PSD cones. The solver is an
//! operator-splitting method around a quasi-definite KKT system, factorized
//! once by the sparse LDLᵀ in [`ldl`] and reused across iterations.

pub mod cones;
pub mod dump;
pub mod ldl;
mod program;
mod real;
mod solver;
mod sparse;

pub use cones::{project_psd, project_soc, smat, svec, svec_index, svec_len, Cone, ProjectionError};
pub use ldl::{LdlError, LdlFactor};
pub use program::{ConeProgram, ConeSolution, ConicError, Residuals, Settings, SolveStatus};
pub use real::Real;
pub use solver::{solve_cone_program, ConeSolver};
pub use sparse::CscMatrix;

pub type ConeProgramF64 = ConeProgram<f64>;
pub type ConeSolutionF64 = ConeSolution<f64>;
pub type ConeSolverF64 = ConeSolver<f64>;
pub type SettingsF64 = Settings<f64>;
pub type CscMatrixF64 = CscMatrix<f64>;
