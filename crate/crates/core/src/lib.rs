#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Multiclass local calibration: binned and kernel-based calibration metrics,
//! post-hoc calibrators, LoCal Nets, and empirical bound verifiers.

pub mod error;
pub mod binning;
pub mod calibrators;
pub mod dataset;
pub mod kernels;
pub mod lcn;
pub mod metrics;
pub mod numerics;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
