//! Finite basis physics-informed neural networks for 1D ODEs, trained as an
//! overlapping Schwarz domain-decomposition method.
//!
//! The global solution is a window-weighted sum of small local networks, one
//! per overlapping subdomain, optionally plus a global coarse network. Local
//! networks train against the global residual loss while their neighbors'
//! contributions are frozen between communication steps; a [`Schedule`]
//! decides which subdomains train in each round.

pub mod config;
pub mod decomp;
pub mod diffnet;
pub mod error;
pub mod experiment;
pub mod optim;
pub mod pinn;
pub mod problem;
pub mod report;
pub mod schedule;
pub mod trainer;

pub use decomp::{build_decomposition, classify_points, sample_collocation, Decomposition, Interval};
pub use diffnet::{eval_with_input_derivative, init_params, loss_gradient, MlpParams, ParamGradient};
pub use error::{FbpinnError, Result};
pub use optim::{OptimizerConfig, OptimizerKind};
pub use problem::{make_single_frequency, make_two_frequency, ConstraintSpec, OdeProblem};
pub use report::{LossBreakdown, RunReport};
pub use schedule::{ActiveSet, Schedule};
pub use trainer::{Attribution, FbpinnState, LocalTraining, OverlapCache};
