//! Entropic regularization of the one-dimensional Monge problem with
//! distance cost.
//!
//! - [`measures`]: piecewise-constant densities and their CDFs and quantiles.
//! - [`structure`]: sign decomposition of `F_mu - F_nu`, monotone map, `W1`,
//!   Kantorovich potential and an optimality predicate for discrete plans.
//! - [`limit_plan`]: the entropy-minimal optimal plan selected as `eps -> 0`.
//! - [`solver`]: grids, log-domain Sinkhorn, masked IPF and a small oracle.
//! - [`harness`]: eps sweeps, the expansion fit and the recovery plan.

pub mod checks;
pub mod error;
pub mod harness;
pub mod instances;
pub mod limit_plan;
pub mod measures;
mod numeric;
pub mod report;
pub mod solver;
pub mod structure;

pub use error::{HarnessError, LimitPlanError, MeasureError, SolverError, StructureError};
pub use measures::{InstanceFile, Interval, Measure1D, MeasureSpec};
pub use numeric::{composite_tanh_sinh, tanh_sinh};
