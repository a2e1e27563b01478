//! Bivariate discrete emission distribution per latent state.
//!
//! Each state emits a (pain, disability) pair. Margins are truncated Poisson
//! on `{0..=MP}` and `{0..=MD}`; the joint pmf is obtained from the copula CDF
//! by inclusion–exclusion over the four surrounding CDF corners.

use crate::copula::{self, copula_cdf_unchecked, CopulaParam};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Floor applied to joint probabilities before taking logs so the forward
/// recursion stays finite for astronomically unlikely observations.
pub(crate) const PMF_FLOOR: f64 = 1e-300;

/// State-wise emission rates plus the shared copula parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionParams {
    /// Pain rates, one per latent state.
    pub lambda_p: Vec<f64>,
    /// Disability rates, one per latent state.
    pub lambda_d: Vec<f64>,
    pub copula: CopulaParam,
    pub mp: usize,
    pub md: usize,
}

impl EmissionParams {
    pub fn n_states(&self) -> usize {
        self.lambda_p.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_p.len() != self.lambda_d.len() || self.lambda_p.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "lambda_p has {} entries, lambda_d has {}",
                self.lambda_p.len(),
                self.lambda_d.len()
            )));
        }
        for &l in self.lambda_p.iter().chain(self.lambda_d.iter()) {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "emission rates must be strictly positive and finite, got {l}"
                )));
            }
        }
        self.copula.validate()
    }
}

/// ln(y!) for small y.
#[inline]
fn ln_factorial(y: usize) -> f64 {
    (1..=y).map(|k| (k as f64).ln()).sum()
}

/// Truncated Poisson pmf on `{0..=m}`: pmf(y) proportional to `lambda^y / y!`,
/// normalized in log space.
pub fn trunc_poisson_pmf(lambda: f64, m: usize) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "truncated Poisson rate must be strictly positive, got {lambda}"
        )));
    }
    let log_w: Vec<f64> = (0..=m)
        .map(|y| y as f64 * lambda.ln() - ln_factorial(y))
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + log_w.iter().map(|&w| (w - max).exp()).sum::<f64>().ln();
    Ok(log_w.iter().map(|&w| (w - log_z).exp()).collect())
}

/// Cumulative distribution of a truncated-Poisson pmf, accumulated with
/// compensated summation. The final entry is pinned to exactly 1.
pub(crate) fn pmf_to_cdf(pmf: &[f64]) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(pmf.len());
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &p in pmf {
        let y = p - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        cdf.push(sum.min(1.0));
    }
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

/// d pmf(y) / d lambda = pmf(y) * (y - mean) / lambda.
fn pmf_dlambda(pmf: &[f64], lambda: f64) -> Vec<f64> {
    let mean: f64 = pmf.iter().enumerate().map(|(y, &p)| y as f64 * p).sum();
    pmf.iter()
        .enumerate()
        .map(|(y, &p)| p * (y as f64 - mean) / lambda)
        .collect()
}

/// Joint pmf of `(yP, yD)` given state `s`, by inclusion–exclusion of the
/// copula CDF with `F(-1) := 0`. Clamped to `[0, 1]`.
pub fn joint_pmf(e: &EmissionParams, s: usize, yp: usize, yd: usize) -> Result<f64> {
    e.validate()?;
    if s >= e.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "state index {s} out of range for {} states",
            e.n_states()
        )));
    }
    if yp > e.mp || yd > e.md {
        return Err(Error::DimensionMismatch(format!(
            "observation ({yp}, {yd}) outside support ({}, {})",
            e.mp, e.md
        )));
    }
    let cdf_p = pmf_to_cdf(&trunc_poisson_pmf(e.lambda_p[s], e.mp)?);
    let cdf_d = pmf_to_cdf(&trunc_poisson_pmf(e.lambda_d[s], e.md)?);
    Ok(joint_pmf_from_cdfs(&e.copula, &cdf_p, &cdf_d, yp, yd))
}

#[inline]
fn cdf_at(cdf: &[f64], y: isize) -> f64 {
    if y < 0 {
        0.0
    } else {
        cdf[y as usize]
    }
}

fn joint_pmf_from_cdfs(c: &CopulaParam, cdf_p: &[f64], cdf_d: &[f64], yp: usize, yd: usize) -> f64 {
    let mut acc = 0.0;
    for ip in 0..2isize {
        for id in 0..2isize {
            let sign = if (ip + id) % 2 == 0 { 1.0 } else { -1.0 };
            let u = cdf_at(cdf_p, yp as isize - ip);
            let v = cdf_at(cdf_d, yd as isize - id);
            acc += sign * copula_cdf_unchecked(c, u, v);
        }
    }
    acc.clamp(0.0, 1.0)
}

/// Precomputed per-state log joint pmf table, indexed `(state, yP, yD)`.
#[derive(Debug, Clone)]
pub struct JointLogPmfTable {
    pub n_states: usize,
    pub mp: usize,
    pub md: usize,
    /// `values[s][yp * (md + 1) + yd]`
    pub values: Vec<Vec<f64>>,
}

impl JointLogPmfTable {
    #[inline]
    pub fn get(&self, s: usize, yp: usize, yd: usize) -> f64 {
        self.values[s][yp * (self.md + 1) + yd]
    }
}

/// Builds the log joint pmf table; entries with pmf below the floor are
/// floored at `log(1e-300)`.
pub fn joint_log_pmf_table(e: &EmissionParams) -> Result<JointLogPmfTable> {
    let tables = EmissionTables::new(e)?;
    Ok(JointLogPmfTable {
        n_states: e.n_states(),
        mp: e.mp,
        md: e.md,
        values: tables.log_joint,
    })
}

/// Joint and marginal log-pmf tables together with their derivatives with
/// respect to the state rates and the copula parameter. This is the working
/// representation used by the forward pass and its adjoint.
#[derive(Debug, Clone)]
pub(crate) struct EmissionTables {
    pub md: usize,
    /// `[state][yp * (md+1) + yd]` log joint pmf (floored).
    pub log_joint: Vec<Vec<f64>>,
    /// d log joint / d lambda_p[state], same layout.
    pub d_lambda_p: Vec<Vec<f64>>,
    pub d_lambda_d: Vec<Vec<f64>>,
    pub d_rho: Vec<Vec<f64>>,
    /// Marginal log pmfs for half-missing observations.
    pub log_marg_p: Vec<Vec<f64>>,
    pub log_marg_d: Vec<Vec<f64>>,
    /// d log marginal pmf / d lambda.
    pub d_marg_p: Vec<Vec<f64>>,
    pub d_marg_d: Vec<Vec<f64>>,
}

impl EmissionTables {
    pub fn new(e: &EmissionParams) -> Result<Self> {
        e.validate()?;
        let n_states = e.n_states();
        let (mp, md) = (e.mp, e.md);
        let cells = (mp + 1) * (md + 1);

        let mut t = EmissionTables {
            md,
            log_joint: vec![vec![0.0; cells]; n_states],
            d_lambda_p: vec![vec![0.0; cells]; n_states],
            d_lambda_d: vec![vec![0.0; cells]; n_states],
            d_rho: vec![vec![0.0; cells]; n_states],
            log_marg_p: vec![vec![0.0; mp + 1]; n_states],
            log_marg_d: vec![vec![0.0; md + 1]; n_states],
            d_marg_p: vec![vec![0.0; mp + 1]; n_states],
            d_marg_d: vec![vec![0.0; md + 1]; n_states],
        };

        for s in 0..n_states {
            let pmf_p = trunc_poisson_pmf(e.lambda_p[s], mp)?;
            let pmf_d = trunc_poisson_pmf(e.lambda_d[s], md)?;
            let cdf_p = pmf_to_cdf(&pmf_p);
            let cdf_d = pmf_to_cdf(&pmf_d);
            let dp = pmf_dlambda(&pmf_p, e.lambda_p[s]);
            let dd = pmf_dlambda(&pmf_d, e.lambda_d[s]);
            // cumulative derivatives of the CDFs
            let dcdf_p: Vec<f64> = dp
                .iter()
                .scan(0.0, |acc, &x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect();
            let dcdf_d: Vec<f64> = dd
                .iter()
                .scan(0.0, |acc, &x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect();

            for (y, &p) in pmf_p.iter().enumerate() {
                let pc = p.max(PMF_FLOOR);
                t.log_marg_p[s][y] = pc.ln();
                t.d_marg_p[s][y] = if p > PMF_FLOOR { dp[y] / p } else { 0.0 };
            }
            for (y, &p) in pmf_d.iter().enumerate() {
                let pc = p.max(PMF_FLOOR);
                t.log_marg_d[s][y] = pc.ln();
                t.d_marg_d[s][y] = if p > PMF_FLOOR { dd[y] / p } else { 0.0 };
            }

            for yp in 0..=mp {
                for yd in 0..=md {
                    let idx = yp * (md + 1) + yd;
                    let mut b = 0.0;
                    let mut db_dlp = 0.0;
                    let mut db_dld = 0.0;
                    let mut db_drho = 0.0;
                    for ip in 0..2isize {
                        for id in 0..2isize {
                            let sign = if (ip + id) % 2 == 0 { 1.0 } else { -1.0 };
                            let up = yp as isize - ip;
                            let vd = yd as isize - id;
                            let u = cdf_at(&cdf_p, up);
                            let v = cdf_at(&cdf_d, vd);
                            let (val, grad) = copula::copula_cdf_with_grad(&e.copula, u, v);
                            b += sign * val;
                            let du_dlp = if up < 0 { 0.0 } else { dcdf_p[up as usize] };
                            let dv_dld = if vd < 0 { 0.0 } else { dcdf_d[vd as usize] };
                            db_dlp += sign * grad.du * du_dlp;
                            db_dld += sign * grad.dv * dv_dld;
                            db_drho += sign * grad.drho;
                        }
                    }
                    let b = b.clamp(0.0, 1.0);
                    let bc = b.max(PMF_FLOOR);
                    t.log_joint[s][idx] = bc.ln();
                    if b > PMF_FLOOR {
                        t.d_lambda_p[s][idx] = db_dlp / b;
                        t.d_lambda_d[s][idx] = db_dld / b;
                        t.d_rho[s][idx] = db_drho / b;
                    }
                }
            }
        }
        Ok(t)
    }

    #[inline]
    pub fn idx(&self, yp: usize, yd: usize) -> usize {
        yp * (self.md + 1) + yd
    }
}

/// Draws a `(yP, yD)` pair for state `s` by pushing a copula sample through
/// the generalized inverses of the truncated-Poisson CDFs.
pub fn emission_sample<R: Rng + ?Sized>(
    e: &EmissionParams,
    s: usize,
    rng: &mut R,
) -> Result<(u8, u8)> {
    let cdf_p = pmf_to_cdf(&trunc_poisson_pmf(e.lambda_p[s], e.mp)?);
    let cdf_d = pmf_to_cdf(&trunc_poisson_pmf(e.lambda_d[s], e.md)?);
    let (u, v) = copula::copula_sample(&e.copula, rng);
    Ok((quantile(&cdf_p, u), quantile(&cdf_d, v)))
}

/// Smallest y with `cdf[y] >= u`.
#[inline]
fn quantile(cdf: &[f64], u: f64) -> u8 {
    cdf.iter().position(|&c| c >= u).unwrap_or(cdf.len() - 1) as u8
}
