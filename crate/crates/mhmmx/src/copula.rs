//! Survival Gumbel copula and its independence limit.
//!
//! The copula couples the two truncated-Poisson symptom margins into a joint
//! distribution with lower tail dependence: joint absence of symptoms is more
//! likely than under independence. All evaluation happens through the closed
//! form
//!
//! ```text
//! C_rho(u, v) = u + v - 1 + exp[-((-log(1-u))^rho + (-log(1-v))^rho)^(1/rho)]
//! ```
//!
//! with `rho >= 1`; `rho = 1` reduces to the independence copula `u * v`.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Cut-off above which arguments are treated as exactly 1 and handled through
/// the boundary identities C(u,1) = u, C(1,v) = v.
const ONE_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopulaFamily {
    SurvivalGumbel,
    Independence,
}

/// Dependence parameter of the emission copula.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CopulaParam {
    pub rho: f64,
    pub family: CopulaFamily,
}

impl CopulaParam {
    pub fn survival_gumbel(rho: f64) -> Result<Self> {
        if !(rho >= 1.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "copula parameter rho must be finite and >= 1, got {rho}"
            )));
        }
        Ok(CopulaParam {
            rho,
            family: CopulaFamily::SurvivalGumbel,
        })
    }

    pub fn independence() -> Self {
        CopulaParam {
            rho: 1.0,
            family: CopulaFamily::Independence,
        }
    }

    /// Effective dependence strength; the independence family behaves exactly
    /// as `rho = 1`.
    pub fn effective_rho(&self) -> f64 {
        match self.family {
            CopulaFamily::Independence => 1.0,
            CopulaFamily::SurvivalGumbel => self.rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 1.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "copula parameter rho must be finite and >= 1, got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// `-log(1 - u)`, accurate for u near 0.
#[inline]
fn neg_log1m(u: f64) -> f64 {
    -f64::ln_1p(-u)
}

/// `(a^rho + b^rho)^(1/rho)` computed via the running maximum so that large
/// exponents cannot overflow.
#[inline]
fn power_norm(a: f64, b: f64, rho: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == 0.0 {
        return 0.0;
    }
    let r = lo / hi;
    // (1 + r^rho)^(1/rho) = exp(ln_1p(r^rho) / rho)
    hi * (f64::ln_1p((rho * r.ln()).exp()) / rho).exp()
}

/// Survival Gumbel copula CDF, clamped to the Fréchet–Hoeffding bounds
/// against round-off.
pub fn copula_cdf(c: &CopulaParam, u: f64, v: f64) -> Result<f64> {
    c.validate()?;
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!(
            "copula arguments must lie in [0,1], got ({u}, {v})"
        )));
    }
    Ok(copula_cdf_unchecked(c, u, v))
}

pub(crate) fn copula_cdf_unchecked(c: &CopulaParam, u: f64, v: f64) -> f64 {
    let rho = c.effective_rho();
    let raw = if u <= 0.0 || v <= 0.0 {
        0.0
    } else if u >= 1.0 - ONE_EPS {
        v
    } else if v >= 1.0 - ONE_EPS {
        u
    } else if rho == 1.0 {
        u * v
    } else {
        let a = neg_log1m(u);
        let b = neg_log1m(v);
        let g = power_norm(a, b, rho);
        u + v - 1.0 + (-g).exp()
    };
    raw.max((u + v - 1.0).max(0.0)).min(u.min(v))
}

/// Partial derivatives of the copula CDF, used by the emission gradient.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CopulaGrad {
    pub du: f64,
    pub dv: f64,
    pub drho: f64,
}

/// `(x / g)^(rho - 1)` with the `x = 0` limit resolved to 0 for `rho > 1`.
#[inline]
fn ratio_pow(x: f64, g: f64, rho: f64) -> f64 {
    if rho == 1.0 {
        return 1.0;
    }
    if x == 0.0 {
        return 0.0;
    }
    ((rho - 1.0) * (x.ln() - g.ln())).exp()
}

/// Copula CDF together with its partial derivatives in `u`, `v`, and `rho`.
///
/// Boundary values follow the limits of the closed form; at `u = 0` the
/// cross-partial `dv` vanishes (and symmetrically), which is exactly what the
/// inclusion–exclusion gradient needs for terms anchored at `F(-1) = 0`.
pub(crate) fn copula_cdf_with_grad(c: &CopulaParam, u: f64, v: f64) -> (f64, CopulaGrad) {
    let rho = c.effective_rho();
    let value = copula_cdf_unchecked(c, u, v);
    let mut grad = CopulaGrad::default();

    if u >= 1.0 - ONE_EPS && v >= 1.0 - ONE_EPS {
        return (value, grad);
    }
    if u >= 1.0 - ONE_EPS {
        grad.dv = 1.0;
        return (value, grad);
    }
    if v >= 1.0 - ONE_EPS {
        grad.du = 1.0;
        return (value, grad);
    }
    if rho == 1.0 {
        grad.du = v;
        grad.dv = u;
        // drho of the survival Gumbel form at rho = 1 exists but the
        // independence family is treated as a fixed point.
        return (value, grad);
    }
    if u <= 0.0 && v <= 0.0 {
        grad.du = 1.0;
        grad.dv = 1.0;
        return (value, grad);
    }

    let a = neg_log1m(u);
    let b = neg_log1m(v);
    let g = power_norm(a, b, rho);
    let e = (-g).exp();

    grad.du = 1.0 - e * ratio_pow(a, g, rho) / (1.0 - u);
    grad.dv = 1.0 - e * ratio_pow(b, g, rho) / (1.0 - v);

    // dg/drho = (g / rho) * (wa*ln(a) + wb*ln(b) - ln(g)), weights wa, wb
    // proportional to a^rho, b^rho.
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let r = lo / hi;
    let rr = (rho * r.ln()).exp(); // (lo/hi)^rho
    let w_hi = 1.0 / (1.0 + rr);
    let w_lo = 1.0 - w_hi;
    let weighted_log = if lo == 0.0 {
        w_hi * hi.ln()
    } else {
        w_hi * hi.ln() + w_lo * lo.ln()
    };
    let dg_drho = (g / rho) * (weighted_log - g.ln());
    grad.drho = -e * dg_drho;

    (value, grad)
}

/// Coefficient of lower tail dependence, `2 - 2^(1/rho)`.
pub fn lower_tail_coefficient(c: &CopulaParam) -> Result<f64> {
    c.validate()?;
    Ok(2.0 - 2f64.powf(1.0 / c.effective_rho()))
}

/// Draws one `(u, v)` pair from the survival Gumbel copula.
///
/// Uses the Marshall–Olkin construction: a positive stable mixing variable
/// with index `1/rho` (Chambers–Mallows–Stuck) yields exact plain-Gumbel
/// uniforms, which are then reflected `(u, v) -> (1-u, 1-v)`.
pub fn copula_sample<R: Rng + ?Sized>(c: &CopulaParam, rng: &mut R) -> (f64, f64) {
    let rho = c.effective_rho();
    if rho == 1.0 {
        return (interior_uniform(rng), interior_uniform(rng));
    }
    let theta = 1.0 / rho; // stable index in (0, 1)
    let s = positive_stable(theta, rng);
    let e1: f64 = exp_sample(rng);
    let e2: f64 = exp_sample(rng);
    let gu = (-(e1 / s).powf(theta)).exp();
    let gv = (-(e2 / s).powf(theta)).exp();
    (clamp_interior(1.0 - gu), clamp_interior(1.0 - gv))
}

#[inline]
fn interior_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    clamp_interior(rng.gen::<f64>())
}

#[inline]
fn clamp_interior(x: f64) -> f64 {
    x.clamp(f64::MIN_POSITIVE, 1.0 - ONE_EPS)
}

#[inline]
fn exp_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -interior_uniform(rng).ln()
}

/// Positive stable variate with Laplace transform `exp(-t^theta)`,
/// `theta` in (0, 1).
fn positive_stable<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    let v = rng.gen::<f64>() * std::f64::consts::PI;
    let w = exp_sample(rng);
    let num = (theta * v).sin();
    let den = v.sin().powf(1.0 / theta);
    let tail = (((1.0 - theta) * v).sin() / w).powf((1.0 - theta) / theta);
    (num / den) * tail
}
