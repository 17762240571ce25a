//! Ground reaction force and floating-base state estimation for planar bipeds.
//!
//! Numeric modules are generic over [`scalar::Real`]; the aliases below fix the
//! scalar to `f64`, which is what the simulator and tools use.

// Dense numeric loops index several arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod mhe;
pub mod orientation;
pub mod qp;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};

pub type Float = f64;

pub type Model = dynamics::RobotModel<Float>;
pub type State = dynamics::GeneralizedState<Float>;
pub type Estimator = mhe::MheEstimator<Float>;
pub type EstimatorConfig = mhe::MheConfig<Float>;
pub type Estimate = mhe::EstimateOut<Float>;
pub type Tick = mhe::TickInput<Float>;
pub type Filter = baselines::Dkf<Float>;
pub type Observer = baselines::Mbo<Float>;
pub type Solver = qp::QpSolver<Float>;
pub type Attitude = orientation::OrientationFilter<Float>;
