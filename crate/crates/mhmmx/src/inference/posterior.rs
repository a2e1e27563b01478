//! Log-posterior of the mixture HMM in unconstrained space, with analytic
//! gradients assembled from the forward-backward adjoint.

use crate::data::{Dataset, Observation};
use crate::emission::EmissionTables;
use crate::error::{Error, Result};
use crate::hmm::{self, LogParams};
use crate::mixture::{self, softmax, FittedModel, MixtureModel, ModelSpec, QRTransform};
use crate::transform::{self, ConstrainedGrad, ParamLayout};
use rayon::prelude::*;

use super::diagnostics::DiagnosticsReport;
use super::draws::{relabel_draws, PosteriorDraws};
use super::hmc::{hmc_sample, SamplerConfig, Target};
use super::optimize::{map_estimate, MapConfig};

/// The unnormalized log posterior over unconstrained parameters for one
/// model configuration and dataset. Weight covariates are the rows of Q from
/// the thin QR of the centered design matrix.
pub struct Posterior {
    pub spec: ModelSpec,
    pub layout: ParamLayout,
    pub qr: QRTransform,
    /// Column means subtracted before the QR factorization.
    pub centering: Vec<f64>,
    trajectories: Vec<Vec<Observation>>,
}

impl Posterior {
    /// Centers the encoded risk factors, factors them, and captures the
    /// trajectories. The dataset passed here defines the centering and Q
    /// basis; score new patients through [`FittedModel`] instead.
    pub fn new(spec: &ModelSpec, ds: &Dataset) -> Result<Self> {
        spec.validate()?;
        ds.validate()?;
        if ds.mp as usize != spec.mp || ds.md as usize != spec.md {
            return Err(Error::DimensionMismatch(format!(
                "dataset support ({}, {}) differs from model ({}, {})",
                ds.mp, ds.md, spec.mp, spec.md
            )));
        }
        let x: Vec<Vec<f64>> = ds.patients.iter().map(|p| p.x.clone()).collect();
        let p = x.first().map_or(0, |r| r.len());
        let centering = column_means(&x, p);
        let centered: Vec<Vec<f64>> = x
            .iter()
            .map(|row| row.iter().zip(&centering).map(|(&v, &m)| v - m).collect())
            .collect();
        let qr = if p > 0 {
            mixture::qr_reparameterize(&centered)?
        } else {
            QRTransform {
                q: vec![vec![]; ds.patients.len()],
                r: vec![],
            }
        };
        Ok(Posterior {
            layout: ParamLayout::from_spec(spec, p),
            spec: spec.clone(),
            qr,
            centering,
            trajectories: ds.patients.iter().map(|p| p.trajectory.clone()).collect(),
        })
    }

    pub fn n_patients(&self) -> usize {
        self.trajectories.len()
    }

    /// Log-likelihood and constrained-space gradient, parallel over patients
    /// with an order-stable reduction.
    fn loglik_grad(&self, model: &MixtureModel) -> Result<(f64, ConstrainedGrad)> {
        let k = self.layout.k;
        let tables: Vec<EmissionTables> = model
            .hmms
            .iter()
            .map(|m| EmissionTables::new(&m.emissions))
            .collect::<Result<_>>()?;
        let log_params: Vec<LogParams> = model.hmms.iter().map(LogParams::from_hmm).collect();

        let per_patient: Vec<(f64, ConstrainedGrad)> = (0..self.n_patients())
            .into_par_iter()
            .map(|i| {
                let traj = &self.trajectories[i];
                let q = &self.qr.q[i];
                let omega = mixture::subgroup_weights(&model.weights, q)?;
                let mut logliks = Vec::with_capacity(k);
                let mut grads = Vec::with_capacity(k);
                for kk in 0..k {
                    let (ll, g) = hmm::forward_backward_grad(&log_params[kk], &tables[kk], traj);
                    logliks.push(ll);
                    grads.push(g);
                }
                let scores: Vec<f64> = (0..k)
                    .map(|kk| omega[kk].max(1e-300).ln() + logliks[kk])
                    .collect();
                let l_i = hmm::log_sum_exp(&scores);
                let r = softmax(&scores);

                let mut g = ConstrainedGrad::zeros(&self.layout);
                for kk in 0..k {
                    // weight coefficients: responsibility minus prior weight
                    let w = r[kk] - omega[kk];
                    g.d_alpha[kk] = w;
                    for (slot, &qv) in g.d_beta[kk].iter_mut().zip(q) {
                        *slot = w * qv;
                    }
                    // HMM blocks scale by the responsibility
                    for (slot, &v) in g.d_log_pi[kk].iter_mut().zip(&grads[kk].d_log_pi) {
                        *slot = r[kk] * v;
                    }
                    for (slot, &v) in g.d_log_phi[kk].iter_mut().zip(&grads[kk].d_log_phi) {
                        *slot = r[kk] * v;
                    }
                    for (slot, &v) in g.d_lambda_p[kk].iter_mut().zip(&grads[kk].d_lambda_p) {
                        *slot = r[kk] * v;
                    }
                    for (slot, &v) in g.d_lambda_d[kk].iter_mut().zip(&grads[kk].d_lambda_d) {
                        *slot = r[kk] * v;
                    }
                    g.d_rho[kk] = r[kk] * grads[kk].d_rho;
                }
                Ok((l_i, g))
            })
            .collect::<Result<_>>()?;

        let mut total = 0.0;
        let mut grad = ConstrainedGrad::zeros(&self.layout);
        for (l, g) in &per_patient {
            total += l;
            grad.add_assign(g);
        }
        Ok((total, grad))
    }

    /// Log prior density over constrained parameters (up to constants) and
    /// its constrained-space gradient. The transform's log-Jacobian is added
    /// separately in [`Target::logp_grad`].
    fn log_prior_grad(&self, model: &MixtureModel) -> (f64, ConstrainedGrad) {
        let pr = &self.spec.priors;
        let (k, s) = (self.layout.k, self.layout.s);
        let mut lp = 0.0;
        let mut g = ConstrainedGrad::zeros(&self.layout);

        let va = pr.sd_alpha * pr.sd_alpha;
        let vb = pr.sd_beta_tilde * pr.sd_beta_tilde;
        let vl = pr.sd_lambda * pr.sd_lambda;
        let vr = pr.sd_rho_tilde * pr.sd_rho_tilde;

        for kk in 1..k {
            let a = model.weights.alpha[kk];
            lp -= a * a / (2.0 * va);
            g.d_alpha[kk] = -a / va;
            for (l, &b) in model.weights.beta[kk].iter().enumerate() {
                lp -= b * b / (2.0 * vb);
                g.d_beta[kk][l] = -b / vb;
            }
        }

        let boost = (s - 1) as f64; // concentration S on the favored entry
        for (kk, m) in model.hmms.iter().enumerate() {
            // Dirichlet(S, 1, ..., 1) on pi: density proportional to pi_1^(S-1)
            lp += boost * m.pi[0].max(1e-300).ln();
            g.d_log_pi[kk][0] = boost;
            // Dirichlet rows with diagonal concentration S
            for r in 0..s {
                lp += boost * m.phi[r][r].max(1e-300).ln();
                g.d_log_phi[kk][r * s + r] = boost;
            }
            for (i, &l) in m.emissions.lambda_p.iter().enumerate() {
                lp -= l * l / (2.0 * vl);
                g.d_lambda_p[kk][i] = -l / vl;
            }
            for (i, &l) in m.emissions.lambda_d.iter().enumerate() {
                lp -= l * l / (2.0 * vl);
                g.d_lambda_d[kk][i] = -l / vl;
            }
            if self.layout.has_rho {
                let rt = m.emissions.copula.rho - 1.0;
                lp -= rt * rt / (2.0 * vr);
                g.d_rho[kk] = -rt / vr;
            }
        }
        (lp, g)
    }
}

impl Target for Posterior {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn logp_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let model = transform::constrain(&self.layout, &self.spec, z)?;
        let (ll, mut cg) = self.loglik_grad(&model)?;
        let (lp, pg) = self.log_prior_grad(&model);
        cg.add_assign(&pg);
        let mut grad = transform::chain_grad(&self.layout, &model, &cg);
        let (lj, jg) = transform::log_jacobian_with_grad(&self.layout, &model, z);
        for (gz, &j) in grad.iter_mut().zip(&jg) {
            *gz += j;
        }
        let logp = ll + lp + lj;
        if !logp.is_finite() {
            return Err(Error::NonFinite(format!(
                "log posterior evaluated to {logp}"
            )));
        }
        Ok((logp, grad))
    }
}

fn column_means(x: &[Vec<f64>], p: usize) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    (0..p).map(|j| x.iter().map(|row| row[j]).sum::<f64>() / n).collect()
}

/// End-to-end fit settings: MAP multi-start followed by one HMC chain.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub map: MapConfig,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            map: MapConfig::default(),
            sampler: SamplerConfig::default(),
            seed: 0,
        }
    }
}

/// MAP-initialized HMC fit. Returns relabeled draws with diagnostics and a
/// posterior-mean point model packaged with the encoding for reuse.
pub fn fit(spec: &ModelSpec, ds: &Dataset, cfg: &FitConfig) -> Result<(PosteriorDraws, FittedModel)> {
    let post = Posterior::new(spec, ds)?;
    let z0 = map_estimate(&post, &cfg.map, cfg.seed)?;
    let raw = hmc_sample(&post, &z0, &cfg.sampler, cfg.seed.wrapping_add(1))?;
    let mut draws = PosteriorDraws::from_unconstrained(&post.layout, spec, &raw)?;
    relabel_draws(&mut draws);
    draws.diagnostics = DiagnosticsReport::compute(&draws.values);
    draws.divergence_rate = raw.divergence_rate;
    draws.accept_rate = raw.accept_rate;

    let mean_model = draws.posterior_mean_model()?;
    let fitted = package_fitted(&post, spec, ds, mean_model)?;
    Ok((draws, fitted))
}

/// MAP-only fit: multi-start optimization without sampling. The point model
/// is canonically relabeled and packaged with the encoding like `fit`'s
/// posterior mean.
pub fn fit_map(spec: &ModelSpec, ds: &Dataset, cfg: &MapConfig, seed: u64) -> Result<FittedModel> {
    let post = Posterior::new(spec, ds)?;
    let z = map_estimate(&post, cfg, seed)?;
    let mut model = transform::constrain(&post.layout, spec, &z)?;
    super::draws::relabel_model(&mut model);
    package_fitted(&post, spec, ds, model)
}

/// Wraps a Q-space point model into a self-contained document: recovers
/// original-space coefficients and attaches the fit-split encoding.
fn package_fitted(
    post: &Posterior,
    spec: &ModelSpec,
    ds: &Dataset,
    q_model: crate::mixture::MixtureModel,
) -> Result<FittedModel> {
    let beta_tilde: Vec<Vec<f64>> = q_model.weights.beta.clone();
    let mut original = q_model;
    if post.layout.p > 0 {
        for (kk, bt) in beta_tilde.iter().enumerate() {
            original.weights.beta[kk] = if kk == 0 {
                vec![0.0; post.layout.p]
            } else {
                post.qr.recover_beta(bt)?
            };
        }
    }
    let mut encoding = ds.encoding.clone();
    encoding.centering = post.centering.clone();
    Ok(FittedModel {
        spec: spec.clone(),
        model: original,
        beta_tilde,
        r: post.qr.r.clone(),
        encoding,
    })
}
