#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod device;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod pulses;
pub mod qcore;
pub mod readout;
pub mod rb;
pub mod report;
pub mod tomo;
pub mod result;

pub use error::{Error, Result};
