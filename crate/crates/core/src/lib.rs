//! Field-of-view safe visual predictive control for a camera-holding arm.
//!
//! The crate covers the whole loop: arm kinematics and the image Jacobian,
//! Gaussian-process learning of residual image dynamics, barrier and chance
//! constraints on the field of view, a receding-horizon QP controller with
//! four variants, a disturbed plant simulator, and the evaluation metrics.

// `!(x > 0.0)` is used on purpose: it rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod controller;
pub mod error;
pub mod gpr;
pub mod kinematics;
pub mod metrics;
pub mod qp;
pub mod quantile;
pub mod runner;
pub mod safety;
pub mod scenario;
pub mod simulator;
pub mod vision;

pub use error::{Error, Result};
