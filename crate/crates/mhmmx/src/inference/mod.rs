//! Posterior construction, MAP optimization, MCMC, and convergence
//! diagnostics.

mod diagnostics;
mod draws;
mod hmc;
mod optimize;
mod posterior;

pub use diagnostics::{ess, split_rhat, DiagnosticsReport};
pub use draws::{flatten_model, param_names, relabel_draws, relabel_model, PosteriorDraws};
pub use hmc::{hmc_sample, rwm_sample, SamplerConfig, Target};
pub use optimize::{map_estimate, MapConfig};
pub use posterior::{fit, fit_map, FitConfig, Posterior};
