//! Multi-start L-BFGS maximization used to initialize the sampler.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::hmc::Target;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub n_starts: usize,
    pub max_iters: usize,
    /// L-BFGS memory depth.
    pub history: usize,
    pub grad_tol: f64,
    /// Initial points are drawn uniformly from `[-scale, scale]` per
    /// coordinate; the first start is the origin.
    pub init_scale: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            n_starts: 10,
            max_iters: 200,
            history: 10,
            grad_tol: 1e-5,
            init_scale: 1.0,
        }
    }
}

/// Maximizes the target from several random starts and returns the best
/// point found. Starts that hit non-finite regions are skipped; it is an
/// error only if every start fails.
pub fn map_estimate<T: Target>(target: &T, cfg: &MapConfig, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = target.dim();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_err: Option<Error> = None;

    for start in 0..cfg.n_starts.max(1) {
        let z0: Vec<f64> = if start == 0 {
            vec![0.0; dim]
        } else {
            (0..dim)
                .map(|_| rng.gen_range(-cfg.init_scale..cfg.init_scale))
                .collect()
        };
        match lbfgs(target, &z0, cfg) {
            Ok((f, z)) => {
                if best.as_ref().map_or(true, |(bf, _)| f > *bf) {
                    best = Some((f, z));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, z)) => Ok(z),
        None => Err(last_err.unwrap_or_else(|| {
            Error::OptimizationFailed("no optimization start succeeded".into())
        })),
    }
}

/// Standard two-loop-recursion L-BFGS with Armijo backtracking, maximizing
/// `target.logp_grad`.
fn lbfgs<T: Target>(target: &T, z0: &[f64], cfg: &MapConfig) -> Result<(f64, Vec<f64>)> {
    let dim = z0.len();
    let mut z = z0.to_vec();
    let (mut f, mut g) = target.logp_grad(&z)?;

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    for _ in 0..cfg.max_iters {
        let gnorm = norm(&g);
        if gnorm < cfg.grad_tol * (1.0 + f.abs()) {
            break;
        }

        // ascent direction from the two-loop recursion on -grad of (-f)
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &q);
            alphas[i] = a;
            axpy(&mut q, -a, &y_hist[i]);
        }
        if m > 0 {
            let last = m - 1;
            let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            if gamma.is_finite() && gamma > 0.0 {
                for v in &mut q {
                    *v *= gamma;
                }
            }
        }
        for i in 0..m {
            let b = rho_hist[i] * dot(&y_hist[i], &q);
            axpy(&mut q, alphas[i] - b, &s_hist[i]);
        }
        let mut dir = q;
        if dot(&dir, &g) <= 0.0 {
            dir = g.clone(); // fall back to steepest ascent
        }

        // Armijo backtracking on the ascent objective
        let slope = dot(&dir, &g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let z_new: Vec<f64> = z.iter().zip(&dir).map(|(&a, &d)| a + step * d).collect();
            match target.logp_grad(&z_new) {
                Ok((f_new, g_new)) if f_new.is_finite() && f_new >= f + 1e-4 * step * slope => {
                    accepted = Some((z_new, f_new, g_new));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((z_new, f_new, g_new)) = accepted else {
            break; // line search stalled; return the best point so far
        };

        let s: Vec<f64> = z_new.iter().zip(&z).map(|(&a, &b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if s_hist.len() == cfg.history {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        z = z_new;
        f = f_new;
        g = g_new;
    }
    debug_assert_eq!(z.len(), dim);
    Ok((f, z))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}
