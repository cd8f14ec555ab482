//! Two-step anomaly and attack detection over hardware performance counter
//! traces.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod predictor;
pub mod red;
pub mod registry;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
