//! Log-domain forward algorithm, Viterbi decoding, and the forward-backward
//! adjoint used by the gradient of the likelihood.
//!
//! Missing observations are marginalized: a fully missing week contributes no
//! emission term, a half-missing week contributes the truncated-Poisson
//! marginal of the present coordinate (available in closed form under the
//! copula construction).

use crate::data::Observation;
use crate::emission::{EmissionParams, EmissionTables};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One subgroup's hidden Markov model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupHMM {
    /// Initial state distribution, length S.
    pub pi: Vec<f64>,
    /// Row-stochastic S x S transition matrix, row-major.
    pub phi: Vec<Vec<f64>>,
    pub emissions: EmissionParams,
}

impl SubgroupHMM {
    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.pi.len();
        if s == 0 {
            return Err(Error::EmptyInput("HMM must have at least one state".into()));
        }
        if self.phi.len() != s || self.emissions.n_states() != s {
            return Err(Error::DimensionMismatch(format!(
                "pi has {s} states, phi has {} rows, emissions have {}",
                self.phi.len(),
                self.emissions.n_states()
            )));
        }
        check_simplex(&self.pi, "pi")?;
        for (r, row) in self.phi.iter().enumerate() {
            if row.len() != s {
                return Err(Error::DimensionMismatch(format!(
                    "phi row {r} has {} entries, expected {s}",
                    row.len()
                )));
            }
            check_simplex(row, &format!("phi row {r}"))?;
        }
        self.emissions.validate()
    }
}

fn check_simplex(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "{name} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Log emission term of one observation in one state; fully missing weeks
/// contribute log 1 = 0.
#[inline]
pub(crate) fn log_emission(tables: &EmissionTables, s: usize, obs: &Observation) -> f64 {
    match (obs.pain, obs.disability) {
        (Some(p), Some(d)) => tables.log_joint[s][tables.idx(p as usize, d as usize)],
        (Some(p), None) => tables.log_marg_p[s][p as usize],
        (None, Some(d)) => tables.log_marg_d[s][d as usize],
        (None, None) => 0.0,
    }
}

pub(crate) struct LogParams {
    pub log_pi: Vec<f64>,
    /// Row-major S x S.
    pub log_phi: Vec<f64>,
}

impl LogParams {
    pub fn from_hmm(m: &SubgroupHMM) -> Self {
        let s = m.n_states();
        let log_pi = m.pi.iter().map(|&p| p.max(1e-300).ln()).collect();
        let mut log_phi = Vec::with_capacity(s * s);
        for row in &m.phi {
            log_phi.extend(row.iter().map(|&p| p.max(1e-300).ln()));
        }
        LogParams { log_pi, log_phi }
    }
}

/// Forward recursion in log space. Returns the full forward lattice and the
/// trajectory log-likelihood.
pub(crate) fn forward_lattice(
    lp: &LogParams,
    tables: &EmissionTables,
    traj: &[Observation],
) -> (Vec<f64>, f64) {
    let s = lp.log_pi.len();
    let t_len = traj.len();
    let mut alpha = vec![0.0; t_len * s];
    let mut scratch = vec![0.0; s];

    for st in 0..s {
        alpha[st] = lp.log_pi[st] + log_emission(tables, st, &traj[0]);
    }
    for t in 1..t_len {
        for st in 0..s {
            for (r, slot) in scratch.iter_mut().enumerate() {
                *slot = alpha[(t - 1) * s + r] + lp.log_phi[r * s + st];
            }
            alpha[t * s + st] = log_sum_exp(&scratch) + log_emission(tables, st, &traj[t]);
        }
    }
    let loglik = log_sum_exp(&alpha[(t_len - 1) * s..]);
    (alpha, loglik)
}

/// Log-likelihood of one trajectory under one subgroup HMM.
pub fn forward_loglik(m: &SubgroupHMM, traj: &[Observation]) -> Result<f64> {
    m.validate()?;
    if traj.is_empty() {
        return Err(Error::EmptyInput("trajectory must have length >= 1".into()));
    }
    check_traj(m, traj)?;
    let tables = EmissionTables::new(&m.emissions)?;
    let lp = LogParams::from_hmm(m);
    Ok(forward_lattice(&lp, &tables, traj).1)
}

fn check_traj(m: &SubgroupHMM, traj: &[Observation]) -> Result<()> {
    for (t, obs) in traj.iter().enumerate() {
        if obs.pain.map_or(false, |p| p as usize > m.emissions.mp)
            || obs.disability.map_or(false, |d| d as usize > m.emissions.md)
        {
            return Err(Error::data(
                format!("week {}", t + 1),
                "observation outside emission support",
            ));
        }
    }
    Ok(())
}

/// Per-trajectory gradient of the log-likelihood with respect to the HMM
/// parameter blocks, from one forward-backward sweep.
#[derive(Debug, Clone)]
pub(crate) struct HmmGrad {
    /// d loglik / d log pi_s (equals the time-1 state posterior).
    pub d_log_pi: Vec<f64>,
    /// d loglik / d log phi_rs (expected transition counts), row-major.
    pub d_log_phi: Vec<f64>,
    pub d_lambda_p: Vec<f64>,
    pub d_lambda_d: Vec<f64>,
    pub d_rho: f64,
}

/// Forward-backward pass: returns the log-likelihood and its gradient.
pub(crate) fn forward_backward_grad(
    lp: &LogParams,
    tables: &EmissionTables,
    traj: &[Observation],
) -> (f64, HmmGrad) {
    let s = lp.log_pi.len();
    let t_len = traj.len();
    let (alpha, loglik) = forward_lattice(lp, tables, traj);

    // Backward lattice.
    let mut beta = vec![0.0; t_len * s];
    let mut scratch = vec![0.0; s];
    for t in (0..t_len - 1).rev() {
        for r in 0..s {
            for (st, slot) in scratch.iter_mut().enumerate() {
                *slot = lp.log_phi[r * s + st]
                    + log_emission(tables, st, &traj[t + 1])
                    + beta[(t + 1) * s + st];
            }
            beta[t * s + r] = log_sum_exp(&scratch);
        }
    }

    let mut grad = HmmGrad {
        d_log_pi: vec![0.0; s],
        d_log_phi: vec![0.0; s * s],
        d_lambda_p: vec![0.0; s],
        d_lambda_d: vec![0.0; s],
        d_rho: 0.0,
    };

    for t in 0..t_len {
        for st in 0..s {
            let gamma = (alpha[t * s + st] + beta[t * s + st] - loglik).exp();
            if t == 0 {
                grad.d_log_pi[st] = gamma;
            }
            match (traj[t].pain, traj[t].disability) {
                (Some(p), Some(d)) => {
                    let idx = tables.idx(p as usize, d as usize);
                    grad.d_lambda_p[st] += gamma * tables.d_lambda_p[st][idx];
                    grad.d_lambda_d[st] += gamma * tables.d_lambda_d[st][idx];
                    grad.d_rho += gamma * tables.d_rho[st][idx];
                }
                (Some(p), None) => {
                    grad.d_lambda_p[st] += gamma * tables.d_marg_p[st][p as usize];
                }
                (None, Some(d)) => {
                    grad.d_lambda_d[st] += gamma * tables.d_marg_d[st][d as usize];
                }
                (None, None) => {}
            }
        }
    }

    for t in 0..t_len - 1 {
        for r in 0..s {
            for st in 0..s {
                let xi = (alpha[t * s + r]
                    + lp.log_phi[r * s + st]
                    + log_emission(tables, st, &traj[t + 1])
                    + beta[(t + 1) * s + st]
                    - loglik)
                    .exp();
                grad.d_log_phi[r * s + st] += xi;
            }
        }
    }

    (loglik, grad)
}

/// Most probable latent state path. Ties break toward the lower state index.
pub fn viterbi_decode(m: &SubgroupHMM, traj: &[Observation]) -> Result<Vec<usize>> {
    m.validate()?;
    if traj.is_empty() {
        return Err(Error::EmptyInput("trajectory must have length >= 1".into()));
    }
    check_traj(m, traj)?;
    let tables = EmissionTables::new(&m.emissions)?;
    let lp = LogParams::from_hmm(m);
    let s = m.n_states();
    let t_len = traj.len();

    let mut delta = vec![f64::NEG_INFINITY; t_len * s];
    let mut back = vec![0usize; t_len * s];
    for st in 0..s {
        delta[st] = lp.log_pi[st] + log_emission(&tables, st, &traj[0]);
    }
    for t in 1..t_len {
        for st in 0..s {
            let mut best = f64::NEG_INFINITY;
            let mut best_r = 0;
            for r in 0..s {
                let score = delta[(t - 1) * s + r] + lp.log_phi[r * s + st];
                if score > best {
                    best = score;
                    best_r = r;
                }
            }
            delta[t * s + st] = best + log_emission(&tables, st, &traj[t]);
            back[t * s + st] = best_r;
        }
    }

    let mut best = f64::NEG_INFINITY;
    let mut state = 0;
    for st in 0..s {
        if delta[(t_len - 1) * s + st] > best {
            best = delta[(t_len - 1) * s + st];
            state = st;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t * s + state];
        path[t - 1] = state;
    }
    Ok(path)
}

/// Joint log-score of a given state path, for oracle comparisons.
pub fn path_log_score(m: &SubgroupHMM, traj: &[Observation], path: &[usize]) -> Result<f64> {
    if path.len() != traj.len() {
        return Err(Error::DimensionMismatch(
            "path and trajectory lengths differ".into(),
        ));
    }
    let tables = EmissionTables::new(&m.emissions)?;
    let lp = LogParams::from_hmm(m);
    let s = m.n_states();
    let mut score = lp.log_pi[path[0]] + log_emission(&tables, path[0], &traj[0]);
    for t in 1..traj.len() {
        score += lp.log_phi[path[t - 1] * s + path[t]] + log_emission(&tables, path[t], &traj[t]);
    }
    Ok(score)
}

/// Per-week distribution over states across a set of decoded paths.
/// Returns a T x S matrix whose rows sum to 1.
pub fn state_occupancy(paths: &[Vec<usize>], n_states: usize) -> Result<Vec<Vec<f64>>> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("no decoded paths".into()));
    }
    let t_len = paths[0].len();
    if paths.iter().any(|p| p.len() != t_len) {
        return Err(Error::DimensionMismatch(
            "decoded paths have unequal lengths".into(),
        ));
    }
    let n = paths.len() as f64;
    let mut occ = vec![vec![0.0; n_states]; t_len];
    for path in paths {
        for (t, &st) in path.iter().enumerate() {
            occ[t][st] += 1.0 / n;
        }
    }
    Ok(occ)
}
