//! Secondary-drying simulation, state estimation and observer design.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod control;
pub mod design;
pub mod error;
pub mod harness;
pub mod model;
pub mod observer;
pub mod ode;
pub mod scenario;
pub mod simulate;

pub use error::{Error, Result};
