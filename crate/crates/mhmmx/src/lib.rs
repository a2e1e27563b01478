//! Mixture hidden Markov models with copula-coupled bivariate count
//! emissions for subgrouping longitudinal pain/disability trajectories.

pub mod assignment;
pub mod copula;
pub mod cvi;
pub mod data;
pub mod emission;
pub mod error;
pub mod hmm;
pub mod inference;
pub mod mixture;
pub mod selection;
pub mod simulate;
pub mod transform;

pub use error::{Error, Result};
