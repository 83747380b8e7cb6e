//! Normal–compound-gamma shrinkage regression: Gibbs sampling, variational
//! Bayes, empirical-Bayes shape updates, prior diagnostics and a simulation
//! harness.

pub mod error;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub mod eval;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod prior;
pub mod vb;
