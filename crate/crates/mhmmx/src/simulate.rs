//! Ground-truth synthetic data generation for recovery, selection, and
//! assignment benchmarks.

use crate::copula::CopulaParam;
use crate::data::{ColumnKind, ColumnSpec, Dataset, Observation, PatientRecord, RiskFactorEncoding};
use crate::emission::{emission_sample, EmissionParams};
use crate::error::{Error, Result};
use crate::hmm::SubgroupHMM;
use crate::mixture::{subgroup_weights, MixtureModel, WeightParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Risk-factor generators, one per column: numeric columns draw standard
/// normals, binary columns draw Bernoulli(0.5) indicator values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskFactorKind {
    Numeric,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    /// True generating parameters; weight coefficients apply to the raw
    /// (uncentered) generated risk factors.
    pub truth: MixtureModel,
    pub risk_factors: Vec<RiskFactorKind>,
    /// Per-component missingness probability in `[0, 1)`.
    pub missingness: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        if self.n == 0 || self.t == 0 {
            return Err(Error::InvalidParameter(
                "simulation needs n >= 1 and t >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.missingness) {
            return Err(Error::InvalidParameter(format!(
                "missingness rate must lie in [0, 1), got {}",
                self.missingness
            )));
        }
        if self.risk_factors.len() != self.truth.weights.beta[0].len() {
            return Err(Error::DimensionMismatch(format!(
                "{} risk-factor generators vs {} weight coefficients",
                self.risk_factors.len(),
                self.truth.weights.beta[0].len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub truth: MixtureModel,
    pub subgroups: Vec<usize>,
    pub state_paths: Vec<Vec<usize>>,
}

/// SplitMix64 step, used to derive independent per-patient seeds.
fn derive_seed(seed: u64, stream: u64, i: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15) ^ i.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generates a full dataset with ground truth. Patient generation and the
/// missingness mask use separate derived RNG streams, so masking commutes
/// with generation: the same seed yields the same underlying values at any
/// missingness rate.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let truth = &cfg.truth;
    let k = truth.n_subgroups();
    let mp = truth.hmms[0].emissions.mp;
    let md = truth.hmms[0].emissions.md;

    let columns: Vec<ColumnSpec> = cfg
        .risk_factors
        .iter()
        .enumerate()
        .map(|(j, kind)| ColumnSpec {
            name: format!("rf{}", j + 1),
            kind: match kind {
                RiskFactorKind::Numeric => ColumnKind::Numeric,
                RiskFactorKind::Binary => ColumnKind::Binary {
                    levels: ["no".into(), "yes".into()],
                },
            },
        })
        .collect();

    let mut patients = Vec::with_capacity(cfg.n);
    let mut subgroups = Vec::with_capacity(cfg.n);
    let mut state_paths = Vec::with_capacity(cfg.n);

    for i in 0..cfg.n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, i as u64));
        let x: Vec<f64> = cfg
            .risk_factors
            .iter()
            .map(|kind| match kind {
                RiskFactorKind::Numeric => std_normal(&mut rng),
                RiskFactorKind::Binary => f64::from(rng.gen::<bool>()),
            })
            .collect();
        let omega = subgroup_weights(&truth.weights, &x)?;
        let kk = sample_categorical(&omega, &mut rng);
        debug_assert!(kk < k);
        let hmm = &truth.hmms[kk];

        let mut path = Vec::with_capacity(cfg.t);
        let mut traj = Vec::with_capacity(cfg.t);
        let mut state = sample_categorical(&hmm.pi, &mut rng);
        for w in 0..cfg.t {
            if w > 0 {
                state = sample_categorical(&hmm.phi[state], &mut rng);
            }
            path.push(state);
            let (yp, yd) = emission_sample(&hmm.emissions, state, &mut rng)?;
            traj.push(Observation::new(yp, yd));
        }

        // independent masking stream
        let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, i as u64));
        for obs in &mut traj {
            if mask_rng.gen::<f64>() < cfg.missingness {
                obs.pain = None;
            }
            if mask_rng.gen::<f64>() < cfg.missingness {
                obs.disability = None;
            }
        }

        patients.push(PatientRecord {
            id: format!("sim{:05}", i + 1),
            x,
            trajectory: traj,
        });
        subgroups.push(kk);
        state_paths.push(path);
    }

    let dataset = Dataset {
        patients,
        encoding: RiskFactorEncoding::new(columns),
        t: cfg.t,
        mp: mp as u8,
        md: md as u8,
    };
    Ok(SimOutput {
        dataset,
        truth: truth.clone(),
        subgroups,
        state_paths,
    })
}

fn sticky_phi(s: usize, diag: f64) -> Vec<Vec<f64>> {
    let off = (1.0 - diag) / (s - 1).max(1) as f64;
    (0..s)
        .map(|r| (0..s).map(|c| if r == c { diag } else { off }).collect())
        .collect()
}

/// The frozen recovery benchmark: 400 patients over 52 weeks, two subgroups
/// with three states each (severe/moderate/mild rate ordering), moderate
/// lower-tail dependence, sticky transitions, four risk factors, 5%
/// missingness.
pub fn recovery_benchmark() -> SimConfig {
    let hmm = |lp: [f64; 3], ld: [f64; 3], rho: f64, pi: [f64; 3]| SubgroupHMM {
        pi: pi.to_vec(),
        phi: sticky_phi(3, 0.8),
        emissions: EmissionParams {
            lambda_p: lp.to_vec(),
            lambda_d: ld.to_vec(),
            copula: CopulaParam::survival_gumbel(rho).expect("rho >= 1"),
            mp: 10,
            md: 7,
        },
    };
    SimConfig {
        n: 400,
        t: 52,
        truth: MixtureModel {
            weights: WeightParams {
                alpha: vec![0.0, 0.5],
                beta: vec![
                    vec![0.0, 0.0, 0.0, 0.0],
                    vec![0.9, -0.6, 0.7, -0.5],
                ],
            },
            hmms: vec![
                hmm([6.0, 3.0, 1.0], [5.0, 2.0, 0.5], 2.0, [0.6, 0.3, 0.1]),
                hmm([4.5, 1.7, 0.4], [3.5, 1.2, 0.25], 1.5, [0.5, 0.3, 0.2]),
            ],
        },
        risk_factors: vec![
            RiskFactorKind::Numeric,
            RiskFactorKind::Numeric,
            RiskFactorKind::Binary,
            RiskFactorKind::Binary,
        ],
        missingness: 0.05,
        seed: 0x5eed_2026,
    }
}

/// Adjusted Rand index between two hard partitions of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "partitions of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let sum_cells: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = row_sums.iter().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = col_sums.iter().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = (sum_rows + sum_cols) / 2.0;
    if (max_index - expected).abs() < 1e-300 {
        // both partitions trivial (e.g. single cluster): perfect agreement
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// Recovery summary comparing a (relabeled) fit against the (relabeled)
/// generating truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// `[k][s]` absolute errors.
    pub lambda_p_abs: Vec<Vec<f64>>,
    pub lambda_d_abs: Vec<Vec<f64>>,
    /// `[k][s]` relative errors.
    pub lambda_p_rel: Vec<Vec<f64>>,
    pub lambda_d_rel: Vec<Vec<f64>>,
    pub rho_abs: Vec<f64>,
    pub ari: f64,
    /// Fraction of (patient, week) cells where decoded and true states
    /// agree, when paths are supplied.
    pub state_agreement: Option<f64>,
}

pub fn recovery_report(
    fit: &MixtureModel,
    truth: &MixtureModel,
    inferred_subgroups: &[usize],
    true_subgroups: &[usize],
    paths: Option<(&[Vec<usize>], &[Vec<usize>])>,
) -> Result<RecoveryReport> {
    if fit.n_subgroups() != truth.n_subgroups()
        || fit.hmms[0].n_states() != truth.hmms[0].n_states()
    {
        return Err(Error::DimensionMismatch(
            "fit and truth have different K or S".into(),
        ));
    }
    let pairwise = |f: &[f64], t: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let abs: Vec<f64> = f.iter().zip(t).map(|(&a, &b)| (a - b).abs()).collect();
        let rel: Vec<f64> = f
            .iter()
            .zip(t)
            .map(|(&a, &b)| (a - b).abs() / b.abs().max(1e-12))
            .collect();
        (abs, rel)
    };
    let mut lambda_p_abs = Vec::new();
    let mut lambda_p_rel = Vec::new();
    let mut lambda_d_abs = Vec::new();
    let mut lambda_d_rel = Vec::new();
    let mut rho_abs = Vec::new();
    for (fh, th) in fit.hmms.iter().zip(&truth.hmms) {
        let (abs, rel) = pairwise(&fh.emissions.lambda_p, &th.emissions.lambda_p);
        lambda_p_abs.push(abs);
        lambda_p_rel.push(rel);
        let (abs, rel) = pairwise(&fh.emissions.lambda_d, &th.emissions.lambda_d);
        lambda_d_abs.push(abs);
        lambda_d_rel.push(rel);
        rho_abs.push((fh.emissions.copula.rho - th.emissions.copula.rho).abs());
    }
    let ari = adjusted_rand_index(inferred_subgroups, true_subgroups)?;
    let state_agreement = match paths {
        Some((inferred, truth_paths)) => {
            let mut agree = 0usize;
            let mut total = 0usize;
            for (a, b) in inferred.iter().zip(truth_paths) {
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch(
                        "state paths have different lengths".into(),
                    ));
                }
                total += a.len();
                agree += a.iter().zip(b).filter(|(x, y)| x == y).count();
            }
            Some(agree as f64 / total.max(1) as f64)
        }
        None => None,
    };
    Ok(RecoveryReport {
        lambda_p_abs,
        lambda_d_abs,
        lambda_p_rel,
        lambda_d_rel,
        rho_abs,
        ari,
        state_agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::joint_pmf;
    use crate::hmm::forward_loglik;

    fn tiny_config(n: usize, t: usize, missingness: f64) -> SimConfig {
        let hmm = SubgroupHMM {
            pi: vec![1.0],
            phi: vec![vec![1.0]],
            emissions: EmissionParams {
                lambda_p: vec![1.2],
                lambda_d: vec![0.8],
                copula: CopulaParam::survival_gumbel(1.8).unwrap(),
                mp: 4,
                md: 3,
            },
        };
        SimConfig {
            n,
            t,
            truth: MixtureModel {
                weights: WeightParams {
                    alpha: vec![0.0],
                    beta: vec![vec![]],
                },
                hmms: vec![hmm],
            },
            risk_factors: vec![],
            missingness,
            seed: 99,
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = recovery_benchmark();
        let small = SimConfig {
            n: 20,
            t: 10,
            ..cfg
        };
        let a = simulate(&small).unwrap();
        let b = simulate(&small).unwrap();
        assert_eq!(a.subgroups, b.subgroups);
        assert_eq!(a.state_paths, b.state_paths);
        for (pa, pb) in a.dataset.patients.iter().zip(&b.dataset.patients) {
            assert_eq!(pa.x, pb.x);
            assert_eq!(pa.trajectory, pb.trajectory);
        }
    }

    #[test]
    fn masking_commutes_with_generation() {
        let full = simulate(&tiny_config(50, 20, 0.0)).unwrap();
        let masked = simulate(&tiny_config(50, 20, 0.3)).unwrap();
        assert_eq!(full.state_paths, masked.state_paths);
        for (pf, pm) in full.dataset.patients.iter().zip(&masked.dataset.patients) {
            for (of, om) in pf.trajectory.iter().zip(&pm.trajectory) {
                if let Some(p) = om.pain {
                    assert_eq!(Some(p), of.pain);
                }
                if let Some(d) = om.disability {
                    assert_eq!(Some(d), of.disability);
                }
            }
        }
        // observed missingness near the nominal rate
        let cells: usize = 50 * 20;
        let missing: usize = masked
            .dataset
            .patients
            .iter()
            .flat_map(|p| &p.trajectory)
            .filter(|o| o.pain.is_none())
            .count();
        let rate = missing as f64 / cells as f64;
        assert!((rate - 0.3).abs() < 0.05, "rate={rate}");
    }

    #[test]
    fn single_state_empirical_pmf_matches_joint() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let cfg = tiny_config(2500, 40, 0.0); // N*T = 1e5 draws
        let out = simulate(&cfg).unwrap();
        let e = &cfg.truth.hmms[0].emissions;
        let mut counts = vec![0u32; (e.mp + 1) * (e.md + 1)];
        for p in &out.dataset.patients {
            for obs in &p.trajectory {
                counts[obs.pain.unwrap() as usize * (e.md + 1) + obs.disability.unwrap() as usize] += 1;
            }
        }
        let n = (cfg.n * cfg.t) as f64;
        let mut chi2 = 0.0;
        let mut dof = 0usize;
        for yp in 0..=e.mp {
            for yd in 0..=e.md {
                let expect = joint_pmf(e, 0, yp, yd).unwrap() * n;
                if expect >= 5.0 {
                    let obs = counts[yp * (e.md + 1) + yd] as f64;
                    chi2 += (obs - expect).powi(2) / expect;
                    dof += 1;
                }
            }
        }
        let p_value = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi2);
        assert!(p_value > 0.01, "chi2={chi2}, dof={dof}, p={p_value}");
    }

    #[test]
    fn subgroup_frequencies_match_mean_weights() {
        let mut cfg = recovery_benchmark();
        cfg.n = 10_000;
        cfg.t = 1;
        let out = simulate(&cfg).unwrap();
        let mut mean_omega = vec![0.0; 2];
        for p in &out.dataset.patients {
            let w = subgroup_weights(&cfg.truth.weights, &p.x).unwrap();
            for (m, &v) in mean_omega.iter_mut().zip(&w) {
                *m += v / cfg.n as f64;
            }
        }
        let mut freq = vec![0.0; 2];
        for &k in &out.subgroups {
            freq[k] += 1.0 / cfg.n as f64;
        }
        for (f, m) in freq.iter().zip(&mean_omega) {
            assert!((f - m).abs() < 0.02, "freq={f} mean_omega={m}");
        }
    }

    #[test]
    fn true_parameters_beat_perturbed_on_likelihood() {
        let mut cfg = recovery_benchmark();
        cfg.n = 1000;
        cfg.t = 20;
        cfg.missingness = 0.0;
        let out = simulate(&cfg).unwrap();
        let mut perturbed = cfg.truth.clone();
        for hmm in &mut perturbed.hmms {
            for l in &mut hmm.emissions.lambda_p {
                *l *= 1.5;
            }
            for l in &mut hmm.emissions.lambda_d {
                *l *= 1.5;
            }
        }
        let score = |model: &MixtureModel| -> f64 {
            out.dataset
                .patients
                .iter()
                .zip(&out.subgroups)
                .map(|(p, &k)| forward_loglik(&model.hmms[k], &p.trajectory).unwrap())
                .sum()
        };
        assert!(score(&cfg.truth) > score(&perturbed));
    }

    #[test]
    fn ari_identity_and_null() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        // permuted labels still perfect
        let b = vec![2, 2, 0, 0, 1, 1];
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);

        // random balanced assignment: ARI near zero
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let truth: Vec<usize> = (0..20_000).map(|i| i % 2).collect();
        let random: Vec<usize> = (0..20_000).map(|_| usize::from(rng.gen::<bool>())).collect();
        let ari = adjusted_rand_index(&truth, &random).unwrap();
        assert!(ari.abs() < 0.05, "ari={ari}");
    }

    #[test]
    fn recovery_report_identity_is_zero_error() {
        let cfg = recovery_benchmark();
        let subgroups = vec![0, 1, 0, 1];
        let paths = vec![vec![0, 1], vec![1, 2], vec![0, 0], vec![2, 2]];
        let rep = recovery_report(
            &cfg.truth,
            &cfg.truth,
            &subgroups,
            &subgroups,
            Some((&paths, &paths)),
        )
        .unwrap();
        assert!(rep.lambda_p_abs.iter().flatten().all(|&e| e == 0.0));
        assert!(rep.rho_abs.iter().all(|&e| e == 0.0));
        assert_eq!(rep.ari, 1.0);
        assert_eq!(rep.state_agreement, Some(1.0));
    }
}
