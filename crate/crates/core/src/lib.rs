//! Linear-quadratic control with delayed control: Riccati kernel solver,
//! optimal feedback, Monte Carlo simulation of the delayed state, and
//! mean-variance portfolio selection with execution delay.

pub mod error;
pub mod grid;
pub mod markowitz;
pub mod model;
pub mod sim;
pub mod solver;

pub mod cli;

pub use error::{Error, Result};
pub use grid::{GridSpec, KernelGrid, KernelId};
pub use model::{feasibility, FeasibilityReport, ModelParams};
pub use solver::{solve_single, solve_two_asset, SolveConfig, SolveDiagnostics, TwoAssetParams};
