//! Subgroup membership weights, QR reparameterization of the design matrix,
//! and the full mixture log-likelihood.

use crate::copula::CopulaFamily;
use crate::data::{Dataset, RiskFactorEncoding};
use crate::error::{Error, Result};
use crate::hmm::{self, SubgroupHMM};
use serde::{Deserialize, Serialize};

/// Multinomial-logit coefficients for the subgroup weights. Subgroup 1 is
/// pinned at zero for identifiability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightParams {
    /// Length K; `alpha[0] == 0`.
    pub alpha: Vec<f64>,
    /// K rows of P coefficients; `beta[0]` is all zero.
    pub beta: Vec<Vec<f64>>,
}

impl WeightParams {
    pub fn n_subgroups(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.beta.len() != self.alpha.len() {
            return Err(Error::DimensionMismatch(format!(
                "alpha has {} entries, beta has {} rows",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        if self.alpha[0] != 0.0 || self.beta[0].iter().any(|&b| b != 0.0) {
            return Err(Error::InvalidParameter(
                "subgroup 1 coefficients must be pinned at zero".into(),
            ));
        }
        let p = self.beta[0].len();
        if self.beta.iter().any(|row| row.len() != p) {
            return Err(Error::DimensionMismatch("ragged beta matrix".into()));
        }
        Ok(())
    }
}

/// Max-shifted softmax over the per-subgroup linear scores.
pub fn subgroup_weights(w: &WeightParams, x: &[f64]) -> Result<Vec<f64>> {
    w.validate()?;
    let p = w.beta[0].len();
    if x.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "risk-factor vector has {} entries, model expects {p}",
            x.len()
        )));
    }
    let scores: Vec<f64> = w
        .alpha
        .iter()
        .zip(&w.beta)
        .map(|(&a, b)| a + b.iter().zip(x).map(|(&bi, &xi)| bi * xi).sum::<f64>())
        .collect();
    Ok(softmax(&scores))
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Thin QR factorization of the centered design matrix, without pivoting.
/// `beta_tilde = R * beta`, so Q-space coefficients map back by
/// back-substitution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QRTransform {
    /// N rows of P orthonormal-column entries.
    pub q: Vec<Vec<f64>>,
    /// P x P upper triangular.
    pub r: Vec<Vec<f64>>,
}

/// Modified Gram-Schmidt with a reorthogonalization pass. Rank deficiency is
/// an error naming the offending column.
pub fn qr_reparameterize(x: &[Vec<f64>]) -> Result<QRTransform> {
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptyInput("design matrix has no rows".into()));
    }
    let p = x[0].len();
    if x.iter().any(|row| row.len() != p) {
        return Err(Error::DimensionMismatch("ragged design matrix".into()));
    }
    if n < p {
        return Err(Error::DimensionMismatch(format!(
            "need at least as many rows ({n}) as columns ({p})"
        )));
    }

    // column-major working copy
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|row| row[j]).collect()).collect();
    let mut r = vec![vec![0.0; p]; p];
    let col_norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|&v| v * v).sum::<f64>().sqrt())
        .collect();

    for j in 0..p {
        // two MGS sweeps against the already-finished columns
        for _ in 0..2 {
            for i in 0..j {
                let (left, right) = cols.split_at_mut(j);
                let ci = &left[i];
                let cj = &mut right[0];
                let proj: f64 = ci.iter().zip(cj.iter()).map(|(&a, &b)| a * b).sum();
                r[i][j] += proj;
                for (vj, &vi) in cj.iter_mut().zip(ci.iter()) {
                    *vj -= proj * vi;
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|&v| v * v).sum::<f64>().sqrt();
        let scale = col_norms[j].max(1.0);
        if norm <= 1e-10 * scale {
            return Err(Error::RankDeficient(format!(
                "column {j} is linearly dependent on columns 0..{j}"
            )));
        }
        r[j][j] = norm;
        for v in &mut cols[j] {
            *v /= norm;
        }
    }

    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..p).map(|j| cols[j][i]).collect()).collect();
    Ok(QRTransform { q, r })
}

impl QRTransform {
    /// Solves `R * beta = beta_tilde` by back-substitution.
    pub fn recover_beta(&self, beta_tilde: &[f64]) -> Result<Vec<f64>> {
        let p = self.r.len();
        if beta_tilde.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "beta_tilde has {} entries, expected {p}",
                beta_tilde.len()
            )));
        }
        let mut beta = vec![0.0; p];
        for i in (0..p).rev() {
            let mut acc = beta_tilde[i];
            for j in i + 1..p {
                acc -= self.r[i][j] * beta[j];
            }
            beta[i] = acc / self.r[i][i];
        }
        Ok(beta)
    }

    /// Q-space row for a new centered covariate vector: solves `q R = x`.
    pub fn project_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        q_row_from_r(&self.r, x)
    }

    /// `R * beta`, the forward map into Q-space.
    pub fn to_beta_tilde(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let p = self.r.len();
        if beta.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, expected {p}",
                beta.len()
            )));
        }
        Ok((0..p)
            .map(|i| (i..p).map(|j| self.r[i][j] * beta[j]).sum())
            .collect())
    }
}

/// Solves the row system `q R = x` by forward substitution, mapping a
/// centered covariate vector into the orthonormal basis of an existing QR
/// factorization.
pub fn q_row_from_r(r: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
    let p = r.len();
    if x.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariate vector has {} entries, R is {p}x{p}",
            x.len()
        )));
    }
    let mut q = vec![0.0; p];
    for j in 0..p {
        let mut acc = x[j];
        for l in 0..j {
            acc -= q[l] * r[l][j];
        }
        q[j] = acc / r[j][j];
    }
    Ok(q)
}

/// The full mixture: shared weight coefficients plus one HMM per subgroup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureModel {
    pub weights: WeightParams,
    pub hmms: Vec<SubgroupHMM>,
}

impl MixtureModel {
    pub fn n_subgroups(&self) -> usize {
        self.hmms.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.weights.n_subgroups() != self.hmms.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight columns vs {} HMMs",
                self.weights.n_subgroups(),
                self.hmms.len()
            )));
        }
        for m in &self.hmms {
            m.validate()?;
        }
        Ok(())
    }
}

/// Full mixture log-likelihood over a dataset, inner sums via log-sum-exp.
/// Patient terms are summed in dataset order for reproducibility.
pub fn mixture_loglik(model: &MixtureModel, ds: &Dataset) -> Result<f64> {
    model.validate()?;
    let mut total = 0.0;
    for p in &ds.patients {
        let omega = subgroup_weights(&model.weights, &p.x)?;
        let terms: Vec<f64> = model
            .hmms
            .iter()
            .zip(&omega)
            .map(|(m, &w)| Ok(w.max(1e-300).ln() + hmm::forward_loglik(m, &p.trajectory)?))
            .collect::<Result<_>>()?;
        total += hmm::log_sum_exp(&terms);
    }
    Ok(total)
}

/// Structural hyperparameters of one model configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub k: usize,
    pub s: usize,
    pub mp: usize,
    pub md: usize,
    pub priors: PriorSettings,
    pub copula: CopulaFamily,
}

impl ModelSpec {
    pub fn new(k: usize, s: usize) -> Self {
        ModelSpec {
            k,
            s,
            mp: 10,
            md: 7,
            priors: PriorSettings::default(),
            copula: CopulaFamily::SurvivalGumbel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.s == 0 {
            return Err(Error::InvalidParameter(
                "K and S must be positive integers".into(),
            ));
        }
        self.priors.validate()
    }
}

/// Prior scales. Dirichlet concentrations are derived from S: the initial
/// distribution boosts the severe state (first index) to S, transition rows
/// boost the diagonal to S, all other entries 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorSettings {
    pub sd_alpha: f64,
    pub sd_beta_tilde: f64,
    pub sd_lambda: f64,
    pub sd_rho_tilde: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            sd_alpha: 5.0,
            sd_beta_tilde: 1.0,
            sd_lambda: 5.0,
            sd_rho_tilde: 5.0,
        }
    }
}

impl PriorSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sd_alpha", self.sd_alpha),
            ("sd_beta_tilde", self.sd_beta_tilde),
            ("sd_lambda", self.sd_lambda),
            ("sd_rho_tilde", self.sd_rho_tilde),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "prior scale {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Self-contained fitted-model document: point parameters in both original
/// and Q-space, the R factor, and the risk-factor encoding, so assignments
/// for new patients reuse identical encodings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub model: MixtureModel,
    /// Q-space coefficients, one row per subgroup (row 0 zero).
    pub beta_tilde: Vec<Vec<f64>>,
    /// Upper-triangular R with `beta_tilde = R * beta`.
    pub r: Vec<Vec<f64>>,
    pub encoding: RiskFactorEncoding,
}

impl FittedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let m: FittedModel = serde_json::from_str(json)?;
        m.model.validate()?;
        m.spec.validate()?;
        Ok(m)
    }
}
