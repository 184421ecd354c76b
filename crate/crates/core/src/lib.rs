//! One-bit compressive sensing: sensing model, classic recovery algorithms,
//! their unfolded (learned) counterparts, training and experiment harness.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod signal_model;
pub mod solvers;
pub mod training;
pub mod unfolded;

pub use error::{Error, Result};
