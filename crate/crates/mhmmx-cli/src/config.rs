//! The persisted run configuration. Every field has an explicit default, so
//! a partial JSON document (or none at all) resolves to a complete, fully
//! serializable configuration; re-running from the persisted
//! `resolved_config.json` reproduces outputs byte-for-byte.

use crate::error::{CliError, CliResult};
use mhmmx::inference::{MapConfig, SamplerConfig};
use mhmmx::mixture::PriorSettings;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Number of latent subgroups.
    pub k: usize,
    /// Number of latent states per subgroup.
    pub s: usize,
    pub priors: PriorSettings,
    pub map: MapConfig,
    pub sampler: SamplerConfig,
    /// Keep every n-th posterior draw in draw-averaged computations.
    pub thin: usize,
    /// Probability thresholds for the accuracy-over-time table.
    pub thresholds: Vec<f64>,
    /// Smoothing window (weeks) for the accuracy table.
    pub window: usize,
    /// Training fraction for the selection split.
    pub split_fraction: f64,
    pub simulate: SimulateBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateBlock {
    pub n: usize,
    pub t: usize,
    pub missingness: f64,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock {
            n: 400,
            t: 52,
            missingness: 0.05,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            k: 2,
            s: 3,
            priors: PriorSettings::default(),
            map: MapConfig::default(),
            sampler: SamplerConfig::default(),
            thin: 1,
            thresholds: vec![0.50, 0.65, 0.80],
            window: 4,
            split_fraction: 0.8,
            simulate: SimulateBlock::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::input(format!("cannot read config `{}`: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::input(format!("config `{}` is not valid: {e}", p.display()))
                })
            }
        }
    }

    pub fn to_json(&self) -> CliResult<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| CliError::input(format!("config serialization: {e}")))
    }
}
