//! English to Tamarian translation: corpus handling, a small transformer
//! built on a reverse-mode autodiff engine, a naive-Bayes baseline, and a
//! crossvalidation harness.

pub mod baseline;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
