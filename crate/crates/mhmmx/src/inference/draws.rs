//! Posterior draw storage, label alignment across draws, and posterior
//! summaries.

use crate::copula::{CopulaFamily, CopulaParam};
use crate::error::{Error, Result};
use crate::mixture::{MixtureModel, ModelSpec};
use crate::transform::{self, ParamLayout};
use serde::{Deserialize, Serialize};

use super::diagnostics::DiagnosticsReport;
use super::hmc::SampleOutput;

/// Relabeled posterior draws of one fitted configuration. `values` holds the
/// constrained parameters per draw in the order given by [`param_names`];
/// `models` are the same draws as structured parameter sets (weights in
/// Q-space).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub models: Vec<MixtureModel>,
    pub diagnostics: DiagnosticsReport,
    pub divergence_rate: f64,
    pub accept_rate: f64,
}

impl PosteriorDraws {
    pub(crate) fn from_unconstrained(
        layout: &ParamLayout,
        spec: &ModelSpec,
        raw: &SampleOutput,
    ) -> Result<Self> {
        let models: Vec<MixtureModel> = raw
            .draws
            .iter()
            .map(|z| transform::constrain(layout, spec, z))
            .collect::<Result<_>>()?;
        let names = param_names(layout);
        let values = models.iter().map(|m| flatten_model(m, layout.has_rho)).collect();
        Ok(PosteriorDraws {
            spec: spec.clone(),
            names,
            values,
            models,
            diagnostics: DiagnosticsReport::default(),
            divergence_rate: raw.divergence_rate,
            accept_rate: raw.accept_rate,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.models.len()
    }

    /// Coordinate-wise posterior mean as a structured model. Averages of
    /// simplex rows stay on the simplex, so the result is a valid model.
    pub fn posterior_mean_model(&self) -> Result<MixtureModel> {
        let first = self
            .models
            .first()
            .ok_or_else(|| Error::EmptyInput("no posterior draws".into()))?;
        let n = self.models.len() as f64;
        let mut mean = first.clone();
        zero_model(&mut mean);
        for m in &self.models {
            for (kk, hmm) in m.hmms.iter().enumerate() {
                let out = &mut mean.hmms[kk];
                for (a, &b) in out.pi.iter_mut().zip(&hmm.pi) {
                    *a += b / n;
                }
                for (row_out, row_in) in out.phi.iter_mut().zip(&hmm.phi) {
                    for (a, &b) in row_out.iter_mut().zip(row_in) {
                        *a += b / n;
                    }
                }
                for (a, &b) in out.emissions.lambda_p.iter_mut().zip(&hmm.emissions.lambda_p) {
                    *a += b / n;
                }
                for (a, &b) in out.emissions.lambda_d.iter_mut().zip(&hmm.emissions.lambda_d) {
                    *a += b / n;
                }
                out.emissions.copula.rho += hmm.emissions.copula.rho / n;
            }
            for (a, &b) in mean.weights.alpha.iter_mut().zip(&m.weights.alpha) {
                *a += b / n;
            }
            for (row_out, row_in) in mean.weights.beta.iter_mut().zip(&m.weights.beta) {
                for (a, &b) in row_out.iter_mut().zip(row_in) {
                    *a += b / n;
                }
            }
        }
        for hmm in &mut mean.hmms {
            if matches!(hmm.emissions.copula.family, CopulaFamily::Independence) {
                hmm.emissions.copula = CopulaParam::independence();
            }
        }
        mean.validate()?;
        Ok(mean)
    }

    /// Posterior mean of each named parameter, matching `names`.
    pub fn posterior_means(&self) -> Vec<f64> {
        let n = self.values.len().max(1) as f64;
        let dim = self.values.first().map_or(0, |v| v.len());
        let mut out = vec![0.0; dim];
        for v in &self.values {
            for (o, &x) in out.iter_mut().zip(v) {
                *o += x / n;
            }
        }
        out
    }
}

fn zero_model(m: &mut MixtureModel) {
    for v in &mut m.weights.alpha {
        *v = 0.0;
    }
    for row in &mut m.weights.beta {
        row.fill(0.0);
    }
    for hmm in &mut m.hmms {
        hmm.pi.fill(0.0);
        for row in &mut hmm.phi {
            row.fill(0.0);
        }
        hmm.emissions.lambda_p.fill(0.0);
        hmm.emissions.lambda_d.fill(0.0);
        hmm.emissions.copula.rho = 0.0;
    }
}

/// Names of the flattened constrained parameters, 1-based indices. Pinned
/// subgroup-1 weight coefficients are omitted.
pub fn param_names(layout: &ParamLayout) -> Vec<String> {
    let (k, s, p) = (layout.k, layout.s, layout.p);
    let mut names = Vec::new();
    for kk in 2..=k {
        names.push(format!("alpha[{kk}]"));
    }
    for kk in 2..=k {
        for j in 1..=p {
            names.push(format!("beta_tilde[{kk},{j}]"));
        }
    }
    for kk in 1..=k {
        for st in 1..=s {
            names.push(format!("pi[{kk},{st}]"));
        }
        for r in 1..=s {
            for c in 1..=s {
                names.push(format!("phi[{kk},{r},{c}]"));
            }
        }
        for st in 1..=s {
            names.push(format!("lambda_p[{kk},{st}]"));
        }
        for st in 1..=s {
            names.push(format!("lambda_d[{kk},{st}]"));
        }
        if layout.has_rho {
            names.push(format!("rho[{kk}]"));
        }
    }
    names
}

/// Flattens a model's constrained parameters in [`param_names`] order.
pub fn flatten_model(m: &MixtureModel, has_rho: bool) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(&m.weights.alpha[1..]);
    for row in &m.weights.beta[1..] {
        out.extend_from_slice(row);
    }
    for hmm in &m.hmms {
        out.extend_from_slice(&hmm.pi);
        for row in &hmm.phi {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&hmm.emissions.lambda_p);
        out.extend_from_slice(&hmm.emissions.lambda_d);
        if has_rho {
            out.push(hmm.emissions.copula.rho);
        }
    }
    out
}

/// Canonical label order inside one draw: states sorted by decreasing pain
/// rate within each subgroup (state 1 = most severe), subgroups sorted by
/// decreasing mean pain rate, and subgroup 1 re-pinned to zero weight
/// coefficients afterwards (a pure shift, which the softmax ignores).
pub fn relabel_model(m: &mut MixtureModel) {
    for hmm in &mut m.hmms {
        let s = hmm.n_states();
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| {
            let key_a = (hmm.emissions.lambda_p[a], hmm.emissions.lambda_d[a]);
            let key_b = (hmm.emissions.lambda_p[b], hmm.emissions.lambda_d[b]);
            key_b
                .partial_cmp(&key_a)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        hmm.pi = order.iter().map(|&o| hmm.pi[o]).collect();
        hmm.emissions.lambda_p = order.iter().map(|&o| hmm.emissions.lambda_p[o]).collect();
        hmm.emissions.lambda_d = order.iter().map(|&o| hmm.emissions.lambda_d[o]).collect();
        let old_phi = hmm.phi.clone();
        for (new_r, &old_r) in order.iter().enumerate() {
            for (new_c, &old_c) in order.iter().enumerate() {
                hmm.phi[new_r][new_c] = old_phi[old_r][old_c];
            }
        }
    }

    let k = m.n_subgroups();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let mean = |kk: usize| {
            let l = &m.hmms[kk].emissions.lambda_p;
            l.iter().sum::<f64>() / l.len() as f64
        };
        mean(b)
            .partial_cmp(&mean(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    m.hmms = order.iter().map(|&o| m.hmms[o].clone()).collect();
    m.weights.alpha = order.iter().map(|&o| m.weights.alpha[o]).collect();
    m.weights.beta = order.iter().map(|&o| m.weights.beta[o].clone()).collect();

    // re-pin subgroup 1 at zero
    let a0 = m.weights.alpha[0];
    for a in &mut m.weights.alpha {
        *a -= a0;
    }
    let b0 = m.weights.beta[0].clone();
    for row in &mut m.weights.beta {
        for (v, &b) in row.iter_mut().zip(&b0) {
            *v -= b;
        }
    }
}

/// Applies [`relabel_model`] to every draw and refreshes the flattened
/// values.
pub fn relabel_draws(draws: &mut PosteriorDraws) {
    let has_rho = draws
        .models
        .first()
        .map_or(false, |m| !matches!(m.hmms[0].emissions.copula.family, CopulaFamily::Independence));
    for m in &mut draws.models {
        relabel_model(m);
    }
    draws.values = draws
        .models
        .iter()
        .map(|m| flatten_model(m, has_rho))
        .collect();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::emission::EmissionParams;
    use crate::hmm::SubgroupHMM;
    use crate::mixture::{mixture_loglik, WeightParams};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scrambled_model(seed: u64) -> MixtureModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 3;
        let mk_simplex = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..s).map(|_| rng.gen_range(0.1..1.0)).collect();
            let tot: f64 = raw.iter().sum();
            raw.iter().map(|&v| v / tot).collect::<Vec<f64>>()
        };
        let mk_hmm = |rng: &mut ChaCha8Rng| SubgroupHMM {
            pi: mk_simplex(rng),
            phi: (0..s).map(|_| mk_simplex(rng)).collect(),
            emissions: EmissionParams {
                lambda_p: (0..s).map(|_| rng.gen_range(0.2..8.0)).collect(),
                lambda_d: (0..s).map(|_| rng.gen_range(0.2..6.0)).collect(),
                copula: CopulaParam::survival_gumbel(rng.gen_range(1.1..3.0)).unwrap(),
                mp: 10,
                md: 7,
            },
        };
        MixtureModel {
            weights: WeightParams {
                alpha: vec![0.0, rng.gen_range(-1.0..1.0)],
                beta: vec![vec![0.0, 0.0], vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]],
            },
            hmms: vec![mk_hmm(&mut rng), mk_hmm(&mut rng)],
        }
    }

    #[test]
    fn relabel_orders_states_and_subgroups() {
        for seed in 0..10 {
            let mut m = scrambled_model(seed);
            relabel_model(&mut m);
            for hmm in &m.hmms {
                for w in hmm.emissions.lambda_p.windows(2) {
                    assert!(w[0] >= w[1], "states not sorted: {:?}", hmm.emissions.lambda_p);
                }
            }
            let mean0: f64 = m.hmms[0].emissions.lambda_p.iter().sum::<f64>() / 3.0;
            let mean1: f64 = m.hmms[1].emissions.lambda_p.iter().sum::<f64>() / 3.0;
            assert!(mean0 >= mean1);
            assert_eq!(m.weights.alpha[0], 0.0);
            assert!(m.weights.beta[0].iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn relabel_is_idempotent() {
        let mut m = scrambled_model(42);
        relabel_model(&mut m);
        let once = m.clone();
        relabel_model(&mut m);
        assert_eq!(format!("{once:?}"), format!("{m:?}"));
    }

    #[test]
    fn relabel_preserves_likelihood() {
        use crate::data::{ColumnKind, ColumnSpec, PatientRecord};
        use crate::data::Dataset;
        use crate::data::RiskFactorEncoding;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ds = Dataset {
            patients: (0..5)
                .map(|i| PatientRecord {
                    id: format!("p{i}"),
                    x: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    trajectory: (0..6)
                        .map(|_| Observation::new(rng.gen_range(0..=10), rng.gen_range(0..=7)))
                        .collect(),
                })
                .collect(),
            encoding: RiskFactorEncoding::new(vec![
                ColumnSpec {
                    name: "a".into(),
                    kind: ColumnKind::Numeric,
                },
                ColumnSpec {
                    name: "b".into(),
                    kind: ColumnKind::Numeric,
                },
            ]),
            t: 6,
            mp: 10,
            md: 7,
        };
        for seed in 0..5 {
            let mut m = scrambled_model(seed);
            let before = mixture_loglik(&m, &ds).unwrap();
            relabel_model(&mut m);
            let after = mixture_loglik(&m, &ds).unwrap();
            assert!((before - after).abs() < 1e-9, "{before} vs {after}");
        }
    }

    #[test]
    fn flatten_matches_names_length() {
        let m = scrambled_model(1);
        let layout = ParamLayout {
            k: 2,
            s: 3,
            p: 2,
            has_rho: true,
        };
        assert_eq!(flatten_model(&m, true).len(), param_names(&layout).len());
    }
}
