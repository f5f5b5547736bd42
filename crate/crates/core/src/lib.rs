//! Bayesian calibration of dynamic simulators with nested sampling and
//! cascaded deep-recurrent surrogates.

extern crate blas_src;

pub mod error;
pub mod model;
pub mod neuralnet;
pub mod pipeline;
pub mod sampler;
pub mod seeding;
pub mod simulators;
pub mod surrogate;
pub mod validation;

pub use error::{Error, Result};
