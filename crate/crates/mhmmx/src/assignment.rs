//! Offline and online subgroup assignment plus the accuracy-over-time
//! analysis.
//!
//! Offline assignment scores a patient from risk factors alone; online
//! assignment additionally conditions on the trajectory prefix observed so
//! far. Given posterior draws, per-draw probabilities are averaged
//! (draw-averaged mode, the default); a point model can be scored directly.

use crate::data::{Observation, PatientRecord};
use crate::emission::EmissionTables;
use crate::error::{Error, Result};
use crate::hmm::{self, LogParams};
use crate::inference::PosteriorDraws;
use crate::mixture::{self, softmax, FittedModel, MixtureModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AssignMode {
    Offline,
    Online { t: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub id: String,
    pub mode: AssignMode,
    /// Length-K probability vector, sums to 1.
    pub probs: Vec<f64>,
    /// Argmax subgroup, 0-based; ties break to the lowest index.
    pub label: usize,
    pub max_prob: f64,
}

impl AssignmentResult {
    fn from_probs(id: &str, mode: AssignMode, probs: Vec<f64>) -> Self {
        let (label, max_prob) = argmax(&probs);
        AssignmentResult {
            id: id.to_string(),
            mode,
            probs,
            label,
            max_prob,
        }
    }
}

fn argmax(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (best, probs[best])
}

/// How many posterior draws to use when averaging. `thin = n` keeps every
/// n-th draw.
#[derive(Debug, Clone, Copy)]
pub enum AssignSource<'a> {
    PointEstimate,
    DrawAverage { draws: &'a PosteriorDraws, thin: usize },
}

/// Per-week online probabilities for one patient under one model: entry `t`
/// conditions on the first `t` weeks; entry 0 is the offline result.
fn model_week_probs(
    model: &MixtureModel,
    x: &[f64],
    traj: &[Observation],
) -> Result<Vec<Vec<f64>>> {
    let omega = mixture::subgroup_weights(&model.weights, x)?;
    let k = model.n_subgroups();
    let log_omega: Vec<f64> = omega.iter().map(|&w| w.max(1e-300).ln()).collect();
    let t_len = traj.len();

    // prefix log-likelihoods from one forward lattice per subgroup
    let mut prefix = vec![vec![0.0; k]; t_len + 1];
    for (kk, m) in model.hmms.iter().enumerate() {
        m.validate()?;
        let tables = EmissionTables::new(&m.emissions)?;
        let lp = LogParams::from_hmm(m);
        if t_len > 0 {
            let (alpha, _) = hmm::forward_lattice(&lp, &tables, traj);
            let s = m.n_states();
            for t in 1..=t_len {
                prefix[t][kk] = hmm::log_sum_exp(&alpha[(t - 1) * s..t * s]);
            }
        }
    }

    Ok(prefix
        .iter()
        .map(|row| {
            let scores: Vec<f64> = (0..k).map(|kk| log_omega[kk] + row[kk]).collect();
            softmax(&scores)
        })
        .collect())
}

/// Candidate models and the covariate vector each expects.
fn candidates<'a>(
    fitted: &'a FittedModel,
    source: &AssignSource<'a>,
    patient: &PatientRecord,
) -> Result<Vec<(&'a MixtureModel, Vec<f64>)>> {
    let centered = fitted.encoding.center(&patient.x)?;
    match source {
        AssignSource::PointEstimate => Ok(vec![(&fitted.model, centered)]),
        AssignSource::DrawAverage { draws, thin } => {
            let q = if centered.is_empty() {
                centered
            } else {
                mixture::q_row_from_r(&fitted.r, &centered)?
            };
            let step = (*thin).max(1);
            let picked: Vec<_> = draws
                .models
                .iter()
                .step_by(step)
                .map(|m| (m, q.clone()))
                .collect();
            if picked.is_empty() {
                return Err(Error::EmptyInput("no posterior draws to average".into()));
            }
            Ok(picked)
        }
    }
}

/// All online assignments for one patient: week 0 (offline) through week T.
/// Probabilities are averaged across candidate models.
pub fn online_profile(
    fitted: &FittedModel,
    source: AssignSource,
    patient: &PatientRecord,
) -> Result<Vec<AssignmentResult>> {
    let cands = candidates(fitted, &source, patient)?;
    let k = fitted.model.n_subgroups();
    let t_len = patient.trajectory.len();
    let mut acc = vec![vec![0.0; k]; t_len + 1];
    for (model, x) in &cands {
        let per_week = model_week_probs(model, x, &patient.trajectory)?;
        for (a, w) in acc.iter_mut().zip(&per_week) {
            for (av, &wv) in a.iter_mut().zip(w) {
                *av += wv / cands.len() as f64;
            }
        }
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(t, probs)| {
            let mode = if t == 0 {
                AssignMode::Offline
            } else {
                AssignMode::Online { t }
            };
            AssignmentResult::from_probs(&patient.id, mode, probs)
        })
        .collect())
}

/// Assignment from risk factors alone.
pub fn assign_offline(
    fitted: &FittedModel,
    source: AssignSource,
    patient: &PatientRecord,
) -> Result<AssignmentResult> {
    let cands = candidates(fitted, &source, patient)?;
    let k = fitted.model.n_subgroups();
    let mut probs = vec![0.0; k];
    for (model, x) in &cands {
        let omega = mixture::subgroup_weights(&model.weights, x)?;
        for (p, &w) in probs.iter_mut().zip(&omega) {
            *p += w / cands.len() as f64;
        }
    }
    Ok(AssignmentResult::from_probs(
        &patient.id,
        AssignMode::Offline,
        probs,
    ))
}

/// Assignment conditioning on the first `t` observed weeks. `t = 0` routes
/// to [`assign_offline`].
pub fn assign_online(
    fitted: &FittedModel,
    source: AssignSource,
    patient: &PatientRecord,
    t: usize,
) -> Result<AssignmentResult> {
    if t > patient.trajectory.len() {
        return Err(Error::DimensionMismatch(format!(
            "prefix length {t} exceeds trajectory length {}",
            patient.trajectory.len()
        )));
    }
    if t == 0 {
        return assign_offline(fitted, source, patient);
    }
    let truncated = PatientRecord {
        id: patient.id.clone(),
        x: patient.x.clone(),
        trajectory: patient.trajectory[..t].to_vec(),
    };
    let profile = online_profile(fitted, source, &truncated)?;
    Ok(profile.into_iter().last().expect("profile is nonempty"))
}

/// Per-week, per-threshold agreement between the week-`t` assignment and the
/// final (full-trajectory) assignment. Cells with no qualifying patients are
/// reported as missing, not zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub thresholds: Vec<f64>,
    /// `agreement[t][j]`: among patients with `max_prob > thresholds[j]` at
    /// week `t`, the fraction whose label matches their final label.
    pub agreement: Vec<Vec<Option<f64>>>,
    pub n_qualifying: Vec<Vec<usize>>,
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.50, 0.65, 0.80];

/// Builds the accuracy table from per-patient online profiles (as produced
/// by [`online_profile`]; every profile must cover the same week range).
pub fn accuracy_over_time(
    profiles: &[Vec<AssignmentResult>],
    thresholds: &[f64],
) -> Result<AccuracyTable> {
    let n_weeks = profiles
        .first()
        .ok_or_else(|| Error::EmptyInput("no assignment profiles".into()))?
        .len();
    if profiles.iter().any(|p| p.len() != n_weeks) {
        return Err(Error::DimensionMismatch(
            "assignment profiles cover different week ranges".into(),
        ));
    }
    let finals: Vec<usize> = profiles.iter().map(|p| p[n_weeks - 1].label).collect();
    let mut agreement = vec![vec![None; thresholds.len()]; n_weeks];
    let mut n_qualifying = vec![vec![0usize; thresholds.len()]; n_weeks];
    for t in 0..n_weeks {
        for (j, &thr) in thresholds.iter().enumerate() {
            let mut n = 0usize;
            let mut agree = 0usize;
            for (p, &fin) in profiles.iter().zip(&finals) {
                if p[t].max_prob > thr {
                    n += 1;
                    if p[t].label == fin {
                        agree += 1;
                    }
                }
            }
            n_qualifying[t][j] = n;
            if n > 0 {
                agreement[t][j] = Some(agree as f64 / n as f64);
            }
        }
    }
    Ok(AccuracyTable {
        thresholds: thresholds.to_vec(),
        agreement,
        n_qualifying,
    })
}

/// Centered moving average over a window, skipping missing cells. Windows
/// with no defined cells stay missing.
pub fn smooth_accuracy(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let w = window.max(1);
    // centered window; for even widths the extra slot extends forward
    (0..series.len())
        .map(|t| {
            let lo = t.saturating_sub((w - 1) / 2);
            let hi = (t + w / 2 + 1).min(series.len());
            let vals: Vec<f64> = series[lo..hi].iter().filter_map(|&v| v).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaParam;
    use crate::data::{ColumnKind, ColumnSpec, RiskFactorEncoding};
    use crate::emission::EmissionParams;
    use crate::hmm::SubgroupHMM;
    use crate::mixture::{ModelSpec, WeightParams};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_hmm(lp: f64, ld: f64) -> SubgroupHMM {
        SubgroupHMM {
            pi: vec![0.6, 0.4],
            phi: vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            emissions: EmissionParams {
                lambda_p: vec![lp, lp * 0.4],
                lambda_d: vec![ld, ld * 0.4],
                copula: CopulaParam::survival_gumbel(1.5).unwrap(),
                mp: 10,
                md: 7,
            },
        }
    }

    fn toy_fitted(alpha2: f64, hmm2: SubgroupHMM) -> FittedModel {
        let model = MixtureModel {
            weights: WeightParams {
                alpha: vec![0.0, alpha2],
                beta: vec![vec![0.0], vec![0.8]],
            },
            hmms: vec![toy_hmm(6.0, 5.0), hmm2],
        };
        let mut encoding = RiskFactorEncoding::new(vec![ColumnSpec {
            name: "x0".into(),
            kind: ColumnKind::Numeric,
        }]);
        encoding.centering = vec![0.0];
        FittedModel {
            spec: ModelSpec::new(2, 2),
            model: model.clone(),
            beta_tilde: model.weights.beta.clone(),
            r: vec![vec![1.0]],
            encoding,
        }
    }

    fn toy_patient(seed: u64, t: usize) -> PatientRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatientRecord {
            id: format!("p{seed}"),
            x: vec![rng.gen_range(-1.0..1.0)],
            trajectory: (0..t)
                .map(|_| Observation::new(rng.gen_range(0..=10), rng.gen_range(0..=7)))
                .collect(),
        }
    }

    #[test]
    fn offline_probs_are_subgroup_weights() {
        let fitted = toy_fitted(0.5, toy_hmm(1.0, 0.6));
        let patient = toy_patient(1, 4);
        let res = assign_offline(&fitted, AssignSource::PointEstimate, &patient).unwrap();
        let omega = mixture::subgroup_weights(&fitted.model.weights, &patient.x).unwrap();
        for (a, b) in res.probs.iter().zip(&omega) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((res.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_break_low() {
        let (label, _) = argmax(&[0.25, 0.25, 0.25, 0.25]);
        assert_eq!(label, 0);
        let (label, _) = argmax(&[0.2, 0.7, 0.1]);
        assert_eq!(label, 1);
    }

    #[test]
    fn online_t0_equals_offline() {
        let fitted = toy_fitted(0.5, toy_hmm(1.0, 0.6));
        let patient = toy_patient(2, 6);
        let off = assign_offline(&fitted, AssignSource::PointEstimate, &patient).unwrap();
        let on = assign_online(&fitted, AssignSource::PointEstimate, &patient, 0).unwrap();
        assert_eq!(off.probs, on.probs);
        assert_eq!(on.mode, AssignMode::Offline);
    }

    #[test]
    fn identical_hmms_leave_probs_at_offline() {
        let fitted = toy_fitted(0.5, toy_hmm(6.0, 5.0));
        let patient = toy_patient(3, 8);
        let profile =
            online_profile(&fitted, AssignSource::PointEstimate, &patient).unwrap();
        let offline = &profile[0].probs;
        for res in &profile {
            for (a, b) in res.probs.iter().zip(offline) {
                assert!((a - b).abs() < 1e-10, "week {:?}", res.mode);
            }
        }
    }

    #[test]
    fn online_conditions_on_evidence() {
        // subgroup 1 emits high counts, subgroup 2 low; a persistently low
        // trajectory should pull probability mass toward subgroup 2
        let fitted = toy_fitted(0.0, toy_hmm(0.8, 0.5));
        let mut patient = toy_patient(4, 10);
        for obs in &mut patient.trajectory {
            *obs = Observation::new(0, 0);
        }
        let profile =
            online_profile(&fitted, AssignSource::PointEstimate, &patient).unwrap();
        let final_probs = &profile.last().unwrap().probs;
        assert!(final_probs[1] > 0.9, "{final_probs:?}");
        assert!(final_probs[1] > profile[0].probs[1]);
    }

    #[test]
    fn profile_matches_pointwise_online_calls() {
        let fitted = toy_fitted(0.3, toy_hmm(1.2, 0.9));
        let patient = toy_patient(5, 6);
        let profile =
            online_profile(&fitted, AssignSource::PointEstimate, &patient).unwrap();
        for t in 0..=6 {
            let single =
                assign_online(&fitted, AssignSource::PointEstimate, &patient, t).unwrap();
            for (a, b) in profile[t].probs.iter().zip(&single.probs) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn accuracy_table_final_week_is_one() {
        let fitted = toy_fitted(0.2, toy_hmm(1.0, 0.7));
        let profiles: Vec<Vec<AssignmentResult>> = (0..8)
            .map(|i| {
                online_profile(&fitted, AssignSource::PointEstimate, &toy_patient(i, 8)).unwrap()
            })
            .collect();
        let table = accuracy_over_time(&profiles, &DEFAULT_THRESHOLDS).unwrap();
        let last = table.agreement.last().unwrap();
        for (j, cell) in last.iter().enumerate() {
            if table.n_qualifying.last().unwrap()[j] > 0 {
                assert_eq!(*cell, Some(1.0));
            }
        }
    }

    #[test]
    fn impossible_threshold_yields_missing_cells() {
        let fitted = toy_fitted(0.2, toy_hmm(1.0, 0.7));
        let profiles: Vec<Vec<AssignmentResult>> = (0..4)
            .map(|i| {
                online_profile(&fitted, AssignSource::PointEstimate, &toy_patient(i, 5)).unwrap()
            })
            .collect();
        let table = accuracy_over_time(&profiles, &[1.1]).unwrap();
        for row in &table.agreement {
            assert_eq!(row[0], None);
        }
    }

    #[test]
    fn smoothing_averages_and_skips_missing() {
        let series = vec![Some(0.0), None, Some(1.0), Some(1.0)];
        let sm = smooth_accuracy(&series, 4);
        assert!((sm[1].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let all_none = smooth_accuracy(&[None, None], 4);
        assert_eq!(all_none, vec![None, None]);
    }

    #[test]
    fn prefix_too_long_is_an_error() {
        let fitted = toy_fitted(0.2, toy_hmm(1.0, 0.7));
        let patient = toy_patient(6, 4);
        assert!(assign_online(&fitted, AssignSource::PointEstimate, &patient, 5).is_err());
    }
}
