//! Budgeted active experimentation: choose which units to randomize under a
//! fixed experimental budget, estimate a linear CATE from inverse-propensity
//! pseudo-outcomes, and audit the resulting confidence statements.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use model::{FeatureMap, FeatureVector, ObsRecord, PoolUnit, PropensityBounds, RctRecord};
