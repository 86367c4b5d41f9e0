//! Sparse Bayesian linear regression with per-coefficient prior precisions,
//! fitted by minimizing the negative log-marginal likelihood with a
//! difference-of-convex scheme.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cg;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod objective;
pub mod projections;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    build_instance, BoxBounds, ConstraintSpec, PrecisionVector, ProblemInstance, Regime, Structure,
};
pub use objective::{evaluate, grad, loss, posterior_summary, LinearPath, PosteriorSummary};
pub use solver::{solve, SolveResult, SolveStatus, SolveTrace, SolverConfig};
pub use baselines::{run_baseline, BaselineConfig, Method};
