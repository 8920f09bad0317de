//! Second-order interference statistics for wireless networks whose
//! senders form a Matérn type-II hard-core process with Nakagami-m fading.
//!
//! The crate computes the mean, variance, temporal covariance and Pearson
//! correlation of the interference power at a point, both by numerical
//! integration and by Monte Carlo simulation, together with the Poisson
//! (ALOHA) baseline of equal intensity.

pub mod analytics;
pub mod channel;
pub mod config;
pub mod curve;
mod error;
pub mod montecarlo;
pub mod quadrature;
pub mod pointprocess;
pub mod retention;
pub mod validation;

pub use analytics::{AnalyticsOptions, Estimate, InterferenceStats, ModelParams};
pub use curve::{CurveData, CurveSpec, Quantity};
pub use error::{Error, Result};
pub use montecarlo::{NetworkModel, SimConfig, SimEstimate};
pub use quadrature::Tolerance;
pub use retention::IntensityConvention;
pub use validation::{ValidationConfig, ValidationReport};
