//! Model selection over (K, S) via the log pointwise predictive density,
//! reported on the deviance scale (lower is better).

use crate::data::Dataset;
use crate::emission::EmissionTables;
use crate::error::{Error, Result};
use crate::hmm::{self, LogParams};
use crate::inference::{fit, FitConfig, PosteriorDraws};
use crate::mixture::{self, FittedModel, MixtureModel, ModelSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpdReport {
    pub k: usize,
    pub s: usize,
    /// Raw lpd: sum over patients of log draw-averaged likelihood.
    pub raw: f64,
    /// Deviance scale, -2 x raw; the reporting default.
    pub deviance: f64,
    /// Per-patient raw lpd terms, in dataset order.
    pub per_patient: Vec<f64>,
    pub n_draws: usize,
}

/// Draw-averaged predictive density of a dataset under posterior draws:
/// `sum_i log((1/M) sum_m sum_k omega_ik^m P(traj_i | hmm_k^m))`, with the
/// inner average done as log-sum-exp minus log M. `thin = n` keeps every
/// n-th draw.
pub fn lpd(
    fitted: &FittedModel,
    draws: &PosteriorDraws,
    ds: &Dataset,
    thin: usize,
) -> Result<LpdReport> {
    let models: Vec<&MixtureModel> = draws.models.iter().step_by(thin.max(1)).collect();
    if models.is_empty() {
        return Err(Error::EmptyInput("no posterior draws".into()));
    }
    if ds.patients.is_empty() {
        return Err(Error::EmptyInput("empty dataset".into()));
    }
    let p = fitted.r.len();

    // Q-space covariates for every patient under the training-split basis.
    let qs: Vec<Vec<f64>> = ds
        .patients
        .iter()
        .map(|pat| {
            let centered = fitted.encoding.center(&pat.x)?;
            if p == 0 {
                Ok(Vec::new())
            } else {
                mixture::q_row_from_r(&fitted.r, &centered)
            }
        })
        .collect::<Result<_>>()?;

    // per-draw, per-patient log mixture likelihoods; draws fan out in
    // parallel, collected in order
    let per_draw: Vec<Vec<f64>> = models
        .par_iter()
        .map(|model| {
            let tables: Vec<EmissionTables> = model
                .hmms
                .iter()
                .map(|m| EmissionTables::new(&m.emissions))
                .collect::<Result<_>>()?;
            let log_params: Vec<LogParams> = model.hmms.iter().map(LogParams::from_hmm).collect();
            ds.patients
                .iter()
                .zip(&qs)
                .map(|(pat, q)| {
                    let omega = mixture::subgroup_weights(&model.weights, q)?;
                    let scores: Vec<f64> = model
                        .hmms
                        .iter()
                        .enumerate()
                        .map(|(kk, _)| {
                            let (_, ll) =
                                hmm::forward_lattice(&log_params[kk], &tables[kk], &pat.trajectory);
                            omega[kk].max(1e-300).ln() + ll
                        })
                        .collect();
                    Ok(hmm::log_sum_exp(&scores))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let m = models.len();
    let log_m = (m as f64).ln();
    let per_patient: Vec<f64> = (0..ds.patients.len())
        .map(|i| {
            let terms: Vec<f64> = per_draw.iter().map(|d| d[i]).collect();
            hmm::log_sum_exp(&terms) - log_m
        })
        .collect();
    let raw: f64 = per_patient.iter().sum();
    Ok(LpdReport {
        k: draws.spec.k,
        s: draws.spec.s,
        raw,
        deviance: -2.0 * raw,
        per_patient,
        n_draws: m,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub spec_k: usize,
    pub spec_s: usize,
    pub in_sample: LpdReport,
    pub out_of_sample: LpdReport,
}

/// One candidate outcome: a successful fit with both lpds, or the error
/// message that felled it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub k: usize,
    pub s: usize,
    pub outcome: std::result::Result<SelectionEntry, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub candidates: Vec<CandidateOutcome>,
    /// The (K, S) with minimum out-of-sample deviance among successful fits.
    pub recommended: Option<(usize, usize)>,
}

/// Fits every candidate spec on the training split and scores both splits.
/// Individual fit failures are recorded without aborting the sweep. Seeds
/// are derived per candidate so the sweep is reproducible as a whole.
pub fn select_over(
    train: &Dataset,
    test: &Dataset,
    specs: &[ModelSpec],
    cfg: &FitConfig,
    thin: usize,
) -> Result<SelectionReport> {
    if specs.is_empty() {
        return Err(Error::EmptyInput("no candidate specs".into()));
    }
    let mut candidates = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut candidate_cfg = cfg.clone();
        candidate_cfg.seed = cfg.seed.wrapping_add(1000 * i as u64);
        let outcome = (|| -> Result<SelectionEntry> {
            let (draws, fitted) = fit(spec, train, &candidate_cfg)?;
            let in_sample = lpd(&fitted, &draws, train, thin)?;
            let out_of_sample = lpd(&fitted, &draws, test, thin)?;
            Ok(SelectionEntry {
                spec_k: spec.k,
                spec_s: spec.s,
                in_sample,
                out_of_sample,
            })
        })();
        candidates.push(CandidateOutcome {
            k: spec.k,
            s: spec.s,
            outcome: outcome.map_err(|e| e.to_string()),
        });
    }
    let recommended = candidates
        .iter()
        .filter_map(|c| {
            c.outcome
                .as_ref()
                .ok()
                .map(|e| ((c.k, c.s), e.out_of_sample.deviance))
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(spec, _)| spec);
    Ok(SelectionReport {
        candidates,
        recommended,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaParam;
    use crate::data::{ColumnKind, ColumnSpec, Observation, PatientRecord, RiskFactorEncoding};
    use crate::emission::EmissionParams;
    use crate::hmm::{forward_loglik, SubgroupHMM};
    use crate::inference::{relabel_draws, PosteriorDraws};
    use crate::mixture::WeightParams;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_hmm(lp: f64, ld: f64) -> SubgroupHMM {
        SubgroupHMM {
            pi: vec![0.5, 0.5],
            phi: vec![vec![0.7, 0.3], vec![0.3, 0.7]],
            emissions: EmissionParams {
                lambda_p: vec![lp, lp * 0.3],
                lambda_d: vec![ld, ld * 0.3],
                copula: CopulaParam::survival_gumbel(1.6).unwrap(),
                mp: 10,
                md: 7,
            },
        }
    }

    fn toy_model(seed: u64) -> MixtureModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MixtureModel {
            weights: WeightParams {
                alpha: vec![0.0, rng.gen_range(-0.5..0.5)],
                beta: vec![vec![0.0], vec![rng.gen_range(-0.5..0.5)]],
            },
            hmms: vec![
                toy_hmm(rng.gen_range(4.0..7.0), rng.gen_range(3.0..5.0)),
                toy_hmm(rng.gen_range(0.5..2.0), rng.gen_range(0.4..1.5)),
            ],
        }
    }

    fn toy_dataset(n: usize, t: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset {
            patients: (0..n)
                .map(|i| PatientRecord {
                    id: format!("p{i}"),
                    x: vec![rng.gen_range(-1.0..1.0)],
                    trajectory: (0..t)
                        .map(|_| Observation::new(rng.gen_range(0..=10), rng.gen_range(0..=7)))
                        .collect(),
                })
                .collect(),
            encoding: RiskFactorEncoding::new(vec![ColumnSpec {
                name: "x0".into(),
                kind: ColumnKind::Numeric,
            }]),
            t,
            mp: 10,
            md: 7,
        }
    }

    fn fake_draws(models: Vec<MixtureModel>) -> (FittedModel, PosteriorDraws) {
        let first = models[0].clone();
        let mut encoding = RiskFactorEncoding::new(vec![ColumnSpec {
            name: "x0".into(),
            kind: ColumnKind::Numeric,
        }]);
        encoding.centering = vec![0.0];
        let fitted = FittedModel {
            spec: ModelSpec::new(2, 2),
            model: first.clone(),
            beta_tilde: first.weights.beta.clone(),
            r: vec![vec![1.0]], // identity: q == centered x
            encoding,
        };
        let draws = PosteriorDraws {
            spec: ModelSpec::new(2, 2),
            names: vec![],
            values: vec![],
            models,
            diagnostics: Default::default(),
            divergence_rate: 0.0,
            accept_rate: 1.0,
        };
        (fitted, draws)
    }

    #[test]
    fn single_draw_single_patient_collapses() {
        let model = toy_model(1);
        let ds = toy_dataset(1, 4, 2);
        let (fitted, draws) = fake_draws(vec![model.clone()]);
        let rep = lpd(&fitted, &draws, &ds, 1).unwrap();
        let expected = crate::mixture::mixture_loglik(&model, &ds).unwrap();
        assert!((rep.raw - expected).abs() < 1e-10);
        assert!((rep.deviance + 2.0 * expected).abs() < 1e-10);
    }

    #[test]
    fn duplicated_draws_do_not_move_lpd() {
        let model = toy_model(3);
        let ds = toy_dataset(4, 5, 4);
        let (fitted, once) = fake_draws(vec![model.clone()]);
        let (_, thrice) = fake_draws(vec![model.clone(), model.clone(), model]);
        let a = lpd(&fitted, &once, &ds, 1).unwrap();
        let b = lpd(&fitted, &thrice, &ds, 1).unwrap();
        assert!((a.raw - b.raw).abs() < 1e-10);
    }

    #[test]
    fn matches_linear_space_oracle() {
        // N=3, T=4, K=2, M=5: direct summation without log-sum-exp
        let models: Vec<MixtureModel> = (0..5).map(toy_model).collect();
        let ds = toy_dataset(3, 4, 9);
        let (fitted, draws) = fake_draws(models.clone());
        let rep = lpd(&fitted, &draws, &ds, 1).unwrap();

        let mut expected = 0.0;
        for pat in &ds.patients {
            let mut avg = 0.0;
            for model in &models {
                let omega =
                    crate::mixture::subgroup_weights(&model.weights, &pat.x).unwrap();
                let mut lik = 0.0;
                for (kk, m) in model.hmms.iter().enumerate() {
                    lik += omega[kk] * forward_loglik(m, &pat.trajectory).unwrap().exp();
                }
                avg += lik / models.len() as f64;
            }
            expected += avg.ln();
        }
        assert!(
            ((rep.raw - expected) / expected.abs()).abs() < 1e-9,
            "{} vs {expected}",
            rep.raw
        );
    }

    #[test]
    fn invariant_under_relabeling() {
        let models: Vec<MixtureModel> = (10..14).map(toy_model).collect();
        let ds = toy_dataset(4, 5, 11);
        let (fitted, mut draws) = fake_draws(models);
        let before = lpd(&fitted, &draws, &ds, 1).unwrap();
        relabel_draws(&mut draws);
        let after = lpd(&fitted, &draws, &ds, 1).unwrap();
        assert!((before.raw - after.raw).abs() < 1e-9);
    }

    #[test]
    fn half_draws_within_monte_carlo_error() {
        let models: Vec<MixtureModel> = (0..40).map(toy_model).collect();
        let ds = toy_dataset(6, 5, 12);
        let (fitted, draws) = fake_draws(models.clone());
        let full = lpd(&fitted, &draws, &ds, 1).unwrap();
        let (_, half_draws) = fake_draws(models[..20].to_vec());
        let half = lpd(&fitted, &half_draws, &ds, 1).unwrap();
        // rough per-patient MC spread on the raw scale
        let spread: f64 = full
            .per_patient
            .iter()
            .zip(&half.per_patient)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(
            (full.raw - half.raw).abs() <= 3.0 * spread.max(1.0),
            "{} vs {}",
            full.raw,
            half.raw
        );
    }

    #[test]
    fn thinning_selects_every_nth() {
        let models: Vec<MixtureModel> = (0..6).map(toy_model).collect();
        let ds = toy_dataset(2, 3, 13);
        let (fitted, draws) = fake_draws(models.clone());
        let thinned = lpd(&fitted, &draws, &ds, 3).unwrap();
        assert_eq!(thinned.n_draws, 2);
        let (_, manual) = fake_draws(vec![models[0].clone(), models[3].clone()]);
        let expect = lpd(&fitted, &manual, &ds, 1).unwrap();
        assert!((thinned.raw - expect.raw).abs() < 1e-12);
    }
}
