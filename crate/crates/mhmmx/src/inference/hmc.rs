//! Hamiltonian Monte Carlo with dual-averaging step-size adaptation and a
//! diagonal mass matrix, plus a random-walk Metropolis fallback.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A differentiable unnormalized log density over unconstrained vectors.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn logp_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_warmup: usize,
    pub n_draws: usize,
    /// Fixed leapfrog length per proposal.
    pub n_leapfrog: usize,
    pub target_accept: f64,
    /// Step size used before adaptation kicks in (and throughout, when
    /// `n_warmup == 0`).
    pub initial_step: f64,
    /// Uniform jitter applied to the provided initial point.
    pub init_jitter: f64,
    /// Post-warmup divergence rate above which sampling is treated as
    /// failed.
    pub max_divergence_rate: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_warmup: 1000,
            n_draws: 2000,
            n_leapfrog: 16,
            target_accept: 0.8,
            initial_step: 0.1,
            init_jitter: 0.1,
            max_divergence_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// Post-warmup draws in unconstrained space, in order.
    pub draws: Vec<Vec<f64>>,
    pub accept_rate: f64,
    pub divergence_rate: f64,
}

/// One standard normal via Box-Muller. Consumes exactly two uniforms per
/// call so the RNG stream position is a pure function of the iteration
/// count, which keeps longer runs prefix-compatible with shorter ones.
fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Energy error beyond which a trajectory counts as divergent.
const DIVERGENCE_ENERGY: f64 = 1000.0;

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: u64,
}

impl DualAveraging {
    fn new(eps0: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            count: 0,
        }
    }

    fn update(&mut self, accept_prob: f64, target: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.count += 1;
        let m = self.count as f64;
        self.h_bar += ((target - accept_prob) - self.h_bar) / (m + T0);
        self.log_eps = self.mu - m.sqrt() / GAMMA * self.h_bar;
        let w = m.powf(-KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }
}

/// Crude but robust step-size search: starting from `eps0`, double or halve
/// until the one-step leapfrog acceptance probability crosses 1/2. Run once
/// at the start of warmup and again after every mass-matrix update, where
/// the previously adapted step size can be arbitrarily wrong under the new
/// metric.
fn find_reasonable_eps<T: Target, R: Rng>(
    target: &T,
    z: &[f64],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
    eps0: f64,
    rng: &mut R,
) -> f64 {
    let p0: Vec<f64> = inv_mass
        .iter()
        .map(|&im| std_normal(rng) / im.sqrt())
        .collect();
    let kinetic0: f64 = p0
        .iter()
        .zip(inv_mass)
        .map(|(&p, &im)| 0.5 * p * p * im)
        .sum();
    let h0 = -logp + kinetic0;

    let accept = |eps: f64| -> f64 {
        let mut pq = p0.clone();
        let mut zq = z.to_vec();
        for (p, &g) in pq.iter_mut().zip(grad) {
            *p += 0.5 * eps * g;
        }
        for ((zv, &p), &im) in zq.iter_mut().zip(&pq).zip(inv_mass) {
            *zv += eps * p * im;
        }
        let (lq, gq) = match target.logp_grad(&zq) {
            Ok(v) => v,
            Err(_) => return 0.0,
        };
        for (p, &g) in pq.iter_mut().zip(&gq) {
            *p += 0.5 * eps * g;
        }
        let kinetic: f64 = pq
            .iter()
            .zip(inv_mass)
            .map(|(&p, &im)| 0.5 * p * p * im)
            .sum();
        let delta = h0 - (-lq + kinetic);
        if delta.is_finite() {
            delta.exp().min(1.0)
        } else {
            0.0
        }
    };

    let mut eps = eps0.clamp(1e-10, 10.0);
    let up = accept(eps) > 0.5;
    for _ in 0..60 {
        eps = if up { eps * 2.0 } else { eps * 0.5 };
        if !(1e-10..=10.0).contains(&eps) {
            break;
        }
        if (accept(eps) > 0.5) != up {
            break;
        }
    }
    eps.clamp(1e-10, 10.0)
}

/// End indices (exclusive) of the mass-adaptation windows inside warmup,
/// plus the first adapting iteration. Two long windows between an initial
/// step-size-only buffer (15% of warmup) and a terminal one (15%): the first
/// window estimates scales under the unit metric once the chain has had time
/// to leave its initialization, the second refines them under the
/// preconditioned metric. Short early windows are deliberately avoided — a
/// chain that has not yet moved reports variances far below the true
/// posterior scales and the resulting mass freezes it permanently.
fn adaptation_windows(n_warmup: usize) -> (usize, Vec<usize>) {
    if n_warmup < 20 {
        return (n_warmup, Vec::new());
    }
    let init_b = n_warmup * 15 / 100;
    let mid = n_warmup * 2 / 5;
    let last = n_warmup * 85 / 100;
    (init_b, vec![mid, last])
}

/// Single-chain HMC. Adaptation happens only during warmup: dual averaging
/// drives the step size toward the target acceptance rate, and the diagonal
/// inverse mass is re-estimated at the end of each expanding window from the
/// draw variances (each update followed by a fresh step-size search).
/// Nothing adapts after warmup, so extending `n_draws` with the same seed
/// reproduces the shorter run as a prefix.
pub fn hmc_sample<T: Target>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SampleOutput> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "init has {} entries, target dimension is {dim}",
            init.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut z: Vec<f64> = init
        .iter()
        .map(|&v| v + cfg.init_jitter * (rng.gen::<f64>() - 0.5) * 2.0)
        .collect();
    let (mut logp, mut grad) = target.logp_grad(&z)?;

    let mut inv_mass: Vec<f64> = vec![1.0; dim];
    let mut eps = if cfg.n_warmup > 0 {
        find_reasonable_eps(target, &z, logp, &grad, &inv_mass, cfg.initial_step, &mut rng)
    } else {
        cfg.initial_step
    };
    let mut da = DualAveraging::new(eps);

    let (w_lo, window_ends) = adaptation_windows(cfg.n_warmup);
    let mut next_window = 0usize;
    let mut window: Vec<Vec<f64>> = Vec::new();

    let mut draws = Vec::with_capacity(cfg.n_draws);
    let mut accepts = 0usize;
    let mut divergences = 0usize;

    for iter in 0..cfg.n_warmup + cfg.n_draws {
        let warming = iter < cfg.n_warmup;

        // jitter the step size to break resonance with fixed-length
        // trajectories; exactly one uniform per iteration
        let eps_iter = eps * (0.8 + 0.4 * rng.gen::<f64>());

        // momentum refresh: p ~ N(0, M), kinetic = 0.5 p' M^{-1} p
        let p0: Vec<f64> = inv_mass
            .iter()
            .map(|&im| std_normal(&mut rng) / im.sqrt())
            .collect();
        let kinetic0: f64 = p0
            .iter()
            .zip(&inv_mass)
            .map(|(&p, &im)| 0.5 * p * p * im)
            .sum();
        let h0 = -logp + kinetic0;

        // leapfrog trajectory
        let mut zq = z.clone();
        let mut pq = p0.clone();
        let mut gq = grad.clone();
        let mut lq = logp;
        let mut ok = true;
        for _ in 0..cfg.n_leapfrog.max(1) {
            for (p, &g) in pq.iter_mut().zip(&gq) {
                *p += 0.5 * eps_iter * g;
            }
            for ((zv, &p), &im) in zq.iter_mut().zip(&pq).zip(&inv_mass) {
                *zv += eps_iter * p * im;
            }
            match target.logp_grad(&zq) {
                Ok((l, g)) => {
                    lq = l;
                    gq = g;
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
            for (p, &g) in pq.iter_mut().zip(&gq) {
                *p += 0.5 * eps_iter * g;
            }
        }

        let accept_prob = if ok {
            let kinetic: f64 = pq
                .iter()
                .zip(&inv_mass)
                .map(|(&p, &im)| 0.5 * p * p * im)
                .sum();
            let h = -lq + kinetic;
            let delta = h0 - h;
            if !delta.is_finite() || -delta > DIVERGENCE_ENERGY {
                if !warming {
                    divergences += 1;
                }
                0.0
            } else {
                delta.exp().min(1.0)
            }
        } else {
            if !warming {
                divergences += 1;
            }
            0.0
        };

        if rng.gen::<f64>() < accept_prob {
            z = zq;
            logp = lq;
            grad = gq;
            if !warming {
                accepts += 1;
            }
        }

        if warming {
            da.update(accept_prob, cfg.target_accept);
            eps = da.log_eps.exp().clamp(1e-8, 10.0);
            if iter >= w_lo && next_window < window_ends.len() {
                window.push(z.clone());
                if iter + 1 == window_ends[next_window] {
                    if window.len() >= 10 {
                        let n = window.len() as f64;
                        for j in 0..dim {
                            let mean: f64 = window.iter().map(|d| d[j]).sum::<f64>() / n;
                            let var: f64 = window.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>()
                                / (n - 1.0);
                            // shrink toward unit mass for stability, and keep
                            // each update within a factor 100 of the previous
                            // estimate so one pathological window cannot
                            // freeze a coordinate beyond recovery
                            let est = var * n / (n + 5.0) + 1e-3 * 5.0 / (n + 5.0);
                            inv_mass[j] =
                                est.clamp(inv_mass[j] / 100.0, inv_mass[j] * 100.0).max(1e-8);
                        }
                        // step size must re-adapt under the new metric
                        eps = find_reasonable_eps(target, &z, logp, &grad, &inv_mass, eps, &mut rng);
                        da = DualAveraging::new(eps);
                    }
                    window.clear();
                    next_window += 1;
                }
            }
            if iter + 1 == cfg.n_warmup {
                eps = da.log_eps_bar.exp().clamp(1e-8, 10.0);
            }
        } else {
            draws.push(z.clone());
        }
    }

    let n = cfg.n_draws.max(1) as f64;
    let divergence_rate = divergences as f64 / n;
    if divergence_rate > cfg.max_divergence_rate {
        return Err(Error::ExcessiveDivergences {
            rate: divergence_rate,
        });
    }
    Ok(SampleOutput {
        draws,
        accept_rate: accepts as f64 / n,
        divergence_rate,
    })
}

/// Gaussian random-walk Metropolis fallback for targets whose gradients are
/// unavailable or unstable. The proposal scale adapts toward a 0.3 accept
/// rate during warmup only.
pub fn rwm_sample<T: Target>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SampleOutput> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "init has {} entries, target dimension is {dim}",
            init.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = init
        .iter()
        .map(|&v| v + cfg.init_jitter * (rng.gen::<f64>() - 0.5) * 2.0)
        .collect();
    let mut logp = target.logp_grad(&z)?.0;

    let mut scale = 2.38 / (dim as f64).sqrt() * 0.5;
    let mut draws = Vec::with_capacity(cfg.n_draws);
    let mut accepts = 0usize;

    for iter in 0..cfg.n_warmup + cfg.n_draws {
        let warming = iter < cfg.n_warmup;
        let prop: Vec<f64> = z.iter().map(|&v| v + scale * std_normal(&mut rng)).collect();
        let lp = target.logp_grad(&prop).map(|(l, _)| l).unwrap_or(f64::NEG_INFINITY);
        let accept_prob = (lp - logp).exp().min(1.0);
        if rng.gen::<f64>() < accept_prob {
            z = prop;
            logp = lp;
            if !warming {
                accepts += 1;
            }
        }
        if warming {
            // Robbins-Monro drift toward the usual RWM acceptance target
            let m = (iter + 1) as f64;
            scale *= ((accept_prob - 0.3) / m.sqrt()).exp();
        } else {
            draws.push(z.clone());
        }
    }
    Ok(SampleOutput {
        draws,
        accept_rate: accepts as f64 / cfg.n_draws.max(1) as f64,
        divergence_rate: 0.0,
    })
}
