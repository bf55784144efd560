//! Mean-field linear-quadratic optimal control of jump diffusions with
//! possibly indefinite weights.
//!
//! The crate solves the coupled Riccati system, builds equivalent cost
//! functionals from functional shifts, synthesizes the optimal feedback and
//! certifies it by Monte Carlo simulation.

pub mod builtin;
pub mod equivalence;
pub mod error;
pub mod io;
pub mod linalg;
pub mod plot;
pub mod problem;
pub mod riccati;
pub mod simulation;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
pub use problem::{CostWeights, Dynamics, JumpAtom, JumpMeasure, MatrixPath, Problem, ProblemSpec, TimeGrid};
pub use riccati::{solve_riccati, RiccatiSolution};
pub use synthesis::{synthesize_feedback, FeedbackLaw};
