//! Method-of-multipliers solver and asymptotic weak-maximum-principle
//! diagnostics for mixed-constrained optimal control in Mayer form.

pub mod alm;
pub mod certificate;
pub mod cli;
pub mod cq;
pub mod error;
pub mod grid;
pub mod lsq;
pub mod model;
pub mod monitor;
pub mod problems;
pub mod transcription;

pub use error::{AwmpError, Result};
