//! Riccati observer for inertial navigation from IMU, a single landmark
//! bearing and one body-frame reference vector.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod observability;
pub mod observer;
pub mod scenario;
pub mod simulator;
pub mod so3;

pub use error::{Error, Result};
