//! Game-theoretic explanations for black-box similarity functions.

pub mod engine;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod explainers;
pub mod game;
pub mod image;
pub mod perturb;
pub mod record;
pub mod regression;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
