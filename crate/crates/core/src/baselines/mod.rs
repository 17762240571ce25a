//! Reference estimators: a disturbance Kalman filter sharing the MHE factors, and a
//! first-order momentum observer.

mod dkf;
mod mbo;

pub use dkf::{Dkf, DkfConfig, DkfOut};
pub use mbo::{Mbo, MboConfig, MboInput, MboOut};

#[cfg(test)]
mod tests;
