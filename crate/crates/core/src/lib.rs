//! Cascade Markov decision processes.
//!
//! A cascade couples an autonomous driver chain `z` on `r` states with a
//! controlled chain `x` on `n` states whose rates depend on `z`. This crate
//! solves finite-horizon expected-cost control problems for such models
//! through an `n × r` matrix Bellman equation, checks the answers against a
//! coupled `rn`-state solver and Monte Carlo simulation, and treats the
//! singular steady-state diversification problem as a box-constrained QP.

pub mod bellman;
pub mod ctmc;
pub mod error;
pub mod exec;
pub mod model;
pub mod ode;
pub mod simulator;
pub mod singular;
pub mod zoo;

pub use bellman::{BellmanSolution, CostMatrix, CostSpec, Psi};
pub use ctmc::{CouplingClass, Generator, JumpMatrix, ProbabilityVector};
pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{CascadeModel, Policy};
