//! Moving-horizon estimation of base state and ground reaction forces.
//!
//! Orientation comes from a separate filter (see [`frontend`]), which leaves every
//! remaining model linear in the state `x = [p, v, b_a, m, f_1, ..]`. Each tick
//! solves a convex QP over the window and folds the oldest tick into the arrival cost.

mod estimator;
pub mod factors;
pub mod frontend;
pub mod window;

pub use estimator::{EstimateOut, MheConfig, MheEstimator, PriorConfig, StepDiagnostics, StepStatus};
pub use factors::{ConstraintMode, NoiseModel, StanceTracker, StateLayout, TickModel, Transition};
pub use frontend::{build_ticks, FrontendConfig, TickInput, VoPair};
pub use window::{ArrivalCost, ChainWindow, LinearRows, MarginalizationReport, Residual, TickFactors, WindowQp};

#[cfg(test)]
mod tests;
