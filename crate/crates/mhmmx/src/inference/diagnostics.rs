//! Single-chain convergence diagnostics: split R-hat and effective sample
//! size via the initial-positive-sequence autocorrelation estimator.

use serde::{Deserialize, Serialize};

/// Split R-hat of one chain: the chain is cut in half and the halves are
/// treated as separate chains. Constant parameters report 1.
pub fn split_rhat(chain: &[f64]) -> f64 {
    let n = chain.len() / 2;
    if n < 2 {
        return f64::NAN;
    }
    let halves = [&chain[..n], &chain[n..2 * n]];
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().map(|h| variance(h)).collect();
    let w = (vars[0] + vars[1]) / 2.0;
    let grand = (means[0] + means[1]) / 2.0;
    let b = n as f64 * ((means[0] - grand).powi(2) + (means[1] - grand).powi(2));
    if w < 1e-300 {
        return 1.0;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// Effective sample size from summed autocorrelations, truncated at the
/// first lag pair whose sum goes non-positive (Geyer's initial positive
/// sequence). Constant parameters report the chain length.
pub fn ess(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return f64::NAN;
    }
    let m = mean(chain);
    let c0 = chain.iter().map(|&x| (x - m).powi(2)).sum::<f64>() / n as f64;
    if c0 < 1e-300 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for t in 0..n - lag {
            acc += (chain[t] - m) * (chain[t + lag] - m);
        }
        acc / n as f64 / c0
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau).min(n as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Per-parameter diagnostics over a draws-by-parameters matrix.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub max_rhat: f64,
    pub min_ess: f64,
}

impl DiagnosticsReport {
    pub fn compute(values: &[Vec<f64>]) -> Self {
        if values.is_empty() {
            return DiagnosticsReport::default();
        }
        let dim = values[0].len();
        let mut rhat = Vec::with_capacity(dim);
        let mut esss = Vec::with_capacity(dim);
        for j in 0..dim {
            let chain: Vec<f64> = values.iter().map(|d| d[j]).collect();
            rhat.push(split_rhat(&chain));
            esss.push(ess(&chain));
        }
        let max_rhat = rhat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_ess = esss.iter().cloned().fold(f64::INFINITY, f64::min);
        DiagnosticsReport {
            rhat,
            ess: esss,
            max_rhat,
            min_ess,
        }
    }

    pub fn converged(&self, rhat_threshold: f64) -> bool {
        self.max_rhat < rhat_threshold
    }
}
