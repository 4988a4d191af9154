//! Gradient optimizers built on the metric a loss surface inherits when it is
//! embedded one dimension up, together with the usual baselines, analytic test
//! landscapes, a small GELU MLP and a benchmark harness.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod landscapes;
pub mod nn;
pub mod numcore;
pub mod optim;
pub mod selftest;

pub use error::{Error, Result};
pub use numcore::{axpy, dot, ParamVector, RngStream};
