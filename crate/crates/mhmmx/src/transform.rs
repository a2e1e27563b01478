//! Bijection between the unconstrained sampler space and constrained model
//! parameters, plus the chain rule and log-Jacobian terms that go with it.
//!
//! Vector layout, in order:
//! - `alpha[2..=K]` (identity)
//! - `beta_tilde[2..=K][1..=P]` (identity, Q-space coefficients)
//! - per subgroup k: initial-distribution logits (S-1, reference state 1),
//!   transition-row logits (S rows of S-1 each), `log lambda_p` (S),
//!   `log lambda_d` (S), and `log(rho - 1)` when the copula has a parameter.

use crate::copula::{CopulaFamily, CopulaParam};
use crate::emission::EmissionParams;
use crate::error::{Error, Result};
use crate::hmm::SubgroupHMM;
use crate::mixture::{softmax, MixtureModel, ModelSpec, WeightParams};

/// Shape of one unconstrained parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub k: usize,
    pub s: usize,
    /// Number of risk-factor columns after encoding.
    pub p: usize,
    /// Whether each subgroup carries a copula dependence parameter.
    pub has_rho: bool,
}

impl ParamLayout {
    pub fn from_spec(spec: &ModelSpec, p: usize) -> Self {
        ParamLayout {
            k: spec.k,
            s: spec.s,
            p,
            has_rho: matches!(spec.copula, CopulaFamily::SurvivalGumbel),
        }
    }

    /// Unconstrained parameters per subgroup HMM block.
    pub fn per_subgroup(&self) -> usize {
        let s = self.s;
        (s - 1) + s * (s - 1) + 2 * s + usize::from(self.has_rho)
    }

    pub fn dim(&self) -> usize {
        (self.k - 1) * (1 + self.p) + self.k * self.per_subgroup()
    }

    fn hmm_offset(&self, k: usize) -> usize {
        (self.k - 1) * (1 + self.p) + k * self.per_subgroup()
    }
}

/// Softmax with the first category pinned to score zero; takes the `S-1`
/// free logits of the remaining categories.
fn simplex_constrain(free: &[f64]) -> Vec<f64> {
    let mut scores = Vec::with_capacity(free.len() + 1);
    scores.push(0.0);
    scores.extend_from_slice(free);
    softmax(&scores)
}

/// Inverse of `simplex_constrain`: `z_j = log x_j - log x_1`.
fn simplex_unconstrain(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter(
            "simplex entries must be strictly positive to unconstrain".into(),
        ));
    }
    let base = x[0].ln();
    Ok(x[1..].iter().map(|&v| v.ln() - base).collect())
}

/// Maps an unconstrained vector to a full mixture model. Subgroup 1
/// coefficients are pinned at zero; the returned weight coefficients live in
/// Q-space (apply them to Q rows, not raw risk factors).
pub fn constrain(layout: &ParamLayout, spec: &ModelSpec, z: &[f64]) -> Result<MixtureModel> {
    if z.len() != layout.dim() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vector has {} entries, layout needs {}",
            z.len(),
            layout.dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "unconstrained parameter vector contains a non-finite entry".into(),
        ));
    }
    let (k, s, p) = (layout.k, layout.s, layout.p);

    let mut alpha = vec![0.0; k];
    let mut beta = vec![vec![0.0; p]; k];
    for j in 1..k {
        alpha[j] = z[j - 1];
    }
    let beta_base = k - 1;
    for j in 1..k {
        for l in 0..p {
            beta[j][l] = z[beta_base + (j - 1) * p + l];
        }
    }

    let mut hmms = Vec::with_capacity(k);
    for kk in 0..k {
        let mut off = layout.hmm_offset(kk);
        let pi = simplex_constrain(&z[off..off + (s - 1)]);
        off += s - 1;
        let mut phi = Vec::with_capacity(s);
        for _ in 0..s {
            phi.push(simplex_constrain(&z[off..off + (s - 1)]));
            off += s - 1;
        }
        let lambda_p: Vec<f64> = z[off..off + s].iter().map(|&u| u.exp()).collect();
        off += s;
        let lambda_d: Vec<f64> = z[off..off + s].iter().map(|&u| u.exp()).collect();
        off += s;
        let copula = if layout.has_rho {
            CopulaParam::survival_gumbel(1.0 + z[off].exp())?
        } else {
            CopulaParam::independence()
        };
        hmms.push(SubgroupHMM {
            pi,
            phi,
            emissions: EmissionParams {
                lambda_p,
                lambda_d,
                copula,
                mp: spec.mp,
                md: spec.md,
            },
        });
    }

    Ok(MixtureModel {
        weights: WeightParams { alpha, beta },
        hmms,
    })
}

/// Inverse of [`constrain`].
pub fn unconstrain(layout: &ParamLayout, model: &MixtureModel) -> Result<Vec<f64>> {
    model.validate()?;
    let (k, s, p) = (layout.k, layout.s, layout.p);
    if model.n_subgroups() != k || model.hmms[0].n_states() != s {
        return Err(Error::DimensionMismatch(format!(
            "model is K={} S={}, layout expects K={k} S={s}",
            model.n_subgroups(),
            model.hmms[0].n_states()
        )));
    }
    let mut z = vec![0.0; layout.dim()];
    for j in 1..k {
        z[j - 1] = model.weights.alpha[j];
    }
    let beta_base = k - 1;
    for j in 1..k {
        for l in 0..p {
            z[beta_base + (j - 1) * p + l] = model.weights.beta[j][l];
        }
    }
    for (kk, m) in model.hmms.iter().enumerate() {
        let mut off = layout.hmm_offset(kk);
        z[off..off + (s - 1)].copy_from_slice(&simplex_unconstrain(&m.pi)?);
        off += s - 1;
        for row in &m.phi {
            z[off..off + (s - 1)].copy_from_slice(&simplex_unconstrain(row)?);
            off += s - 1;
        }
        for (i, &l) in m.emissions.lambda_p.iter().enumerate() {
            z[off + i] = l.ln();
        }
        off += s;
        for (i, &l) in m.emissions.lambda_d.iter().enumerate() {
            z[off + i] = l.ln();
        }
        off += s;
        if layout.has_rho {
            let rho_tilde = m.emissions.copula.rho - 1.0;
            if !(rho_tilde > 0.0) {
                return Err(Error::InvalidParameter(
                    "cannot unconstrain rho at the independence boundary".into(),
                ));
            }
            z[off] = rho_tilde.ln();
        }
    }
    Ok(z)
}

/// Gradient of some objective with respect to the constrained quantities the
/// transform produces. Log-probability gradients are with respect to
/// `log pi` and `log phi` (what the forward-backward adjoint returns); rate
/// and copula gradients are with respect to `lambda` and `rho` themselves.
#[derive(Debug, Clone)]
pub struct ConstrainedGrad {
    pub d_alpha: Vec<f64>,
    pub d_beta: Vec<Vec<f64>>,
    pub d_log_pi: Vec<Vec<f64>>,
    /// `[k][r * s + c]`, flat row-major like the forward pass uses.
    pub d_log_phi: Vec<Vec<f64>>,
    pub d_lambda_p: Vec<Vec<f64>>,
    pub d_lambda_d: Vec<Vec<f64>>,
    pub d_rho: Vec<f64>,
}

impl ConstrainedGrad {
    pub fn zeros(layout: &ParamLayout) -> Self {
        let (k, s, p) = (layout.k, layout.s, layout.p);
        ConstrainedGrad {
            d_alpha: vec![0.0; k],
            d_beta: vec![vec![0.0; p]; k],
            d_log_pi: vec![vec![0.0; s]; k],
            d_log_phi: vec![vec![0.0; s * s]; k],
            d_lambda_p: vec![vec![0.0; s]; k],
            d_lambda_d: vec![vec![0.0; s]; k],
            d_rho: vec![0.0; k],
        }
    }

    pub fn add_assign(&mut self, other: &ConstrainedGrad) {
        fn add_v(a: &mut [f64], b: &[f64]) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        add_v(&mut self.d_alpha, &other.d_alpha);
        add_v(&mut self.d_rho, &other.d_rho);
        for (a, b) in self.d_beta.iter_mut().zip(&other.d_beta) {
            add_v(a, b);
        }
        for (a, b) in self.d_log_pi.iter_mut().zip(&other.d_log_pi) {
            add_v(a, b);
        }
        for (a, b) in self.d_log_phi.iter_mut().zip(&other.d_log_phi) {
            add_v(a, b);
        }
        for (a, b) in self.d_lambda_p.iter_mut().zip(&other.d_lambda_p) {
            add_v(a, b);
        }
        for (a, b) in self.d_lambda_d.iter_mut().zip(&other.d_lambda_d) {
            add_v(a, b);
        }
    }
}

/// Chain rule from constrained-space gradients back to the unconstrained
/// vector. `model` must be `constrain(layout, spec, z)` for the same point.
///
/// For a simplex built from pinned-reference logits, if `g_i = dL/d log x_i`
/// then `dL/dz_j = g_j - x_j * sum_i g_i` for each free index `j`.
pub fn chain_grad(layout: &ParamLayout, model: &MixtureModel, g: &ConstrainedGrad) -> Vec<f64> {
    let (k, s, p) = (layout.k, layout.s, layout.p);
    let mut dz = vec![0.0; layout.dim()];
    for j in 1..k {
        dz[j - 1] = g.d_alpha[j];
    }
    let beta_base = k - 1;
    for j in 1..k {
        for l in 0..p {
            dz[beta_base + (j - 1) * p + l] = g.d_beta[j][l];
        }
    }
    for kk in 0..k {
        let m = &model.hmms[kk];
        let mut off = layout.hmm_offset(kk);
        chain_simplex(&m.pi, &g.d_log_pi[kk], &mut dz[off..off + (s - 1)]);
        off += s - 1;
        for r in 0..s {
            chain_simplex(
                &m.phi[r],
                &g.d_log_phi[kk][r * s..(r + 1) * s],
                &mut dz[off..off + (s - 1)],
            );
            off += s - 1;
        }
        for i in 0..s {
            dz[off + i] = g.d_lambda_p[kk][i] * m.emissions.lambda_p[i];
        }
        off += s;
        for i in 0..s {
            dz[off + i] = g.d_lambda_d[kk][i] * m.emissions.lambda_d[i];
        }
        off += s;
        if layout.has_rho {
            let rho_tilde = m.emissions.copula.rho - 1.0;
            dz[off] = g.d_rho[kk] * rho_tilde;
        }
    }
    dz
}

fn chain_simplex(x: &[f64], g_log: &[f64], out: &mut [f64]) {
    let total: f64 = g_log.iter().sum();
    for (j, o) in out.iter_mut().enumerate() {
        *o = g_log[j + 1] - x[j + 1] * total;
    }
}

/// Log absolute Jacobian determinant of [`constrain`] and its gradient with
/// respect to the unconstrained vector. Simplex blocks contribute
/// `sum_i log x_i` (gradient `1 - S * x_j` per free logit); every log-rate
/// and the log of `rho - 1` contribute the coordinate itself (gradient 1).
pub fn log_jacobian_with_grad(
    layout: &ParamLayout,
    model: &MixtureModel,
    z: &[f64],
) -> (f64, Vec<f64>) {
    let (k, s) = (layout.k, layout.s);
    let mut lj = 0.0;
    let mut grad = vec![0.0; layout.dim()];
    for kk in 0..k {
        let m = &model.hmms[kk];
        let mut off = layout.hmm_offset(kk);
        for &x in &m.pi {
            lj += x.ln();
        }
        for j in 0..s - 1 {
            grad[off + j] = 1.0 - s as f64 * m.pi[j + 1];
        }
        off += s - 1;
        for row in &m.phi {
            for &x in row {
                lj += x.ln();
            }
            for j in 0..s - 1 {
                grad[off + j] = 1.0 - s as f64 * row[j + 1];
            }
            off += s - 1;
        }
        for i in 0..2 * s {
            lj += z[off + i];
            grad[off + i] = 1.0;
        }
        off += 2 * s;
        if layout.has_rho {
            lj += z[off];
            grad[off] = 1.0;
        }
    }
    (lj, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout_and_spec(k: usize, s: usize, p: usize) -> (ParamLayout, ModelSpec) {
        let mut spec = ModelSpec::new(k, s);
        spec.mp = 10;
        spec.md = 7;
        let layout = ParamLayout::from_spec(&spec, p);
        (layout, spec)
    }

    #[test]
    fn dimension_formula() {
        let (layout, _) = layout_and_spec(2, 3, 4);
        // (K-1)(1+P) + K[(S-1) + S(S-1) + 2S + 1]
        assert_eq!(layout.dim(), 1 * 5 + 2 * (2 + 6 + 6 + 1));

        let (l1, _) = layout_and_spec(1, 1, 0);
        assert_eq!(l1.dim(), 1 * (0 + 0 + 2 + 1));
    }

    #[test]
    fn constrain_produces_valid_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (layout, spec) = layout_and_spec(3, 3, 2);
        for _ in 0..20 {
            let z: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let model = constrain(&layout, &spec, &z).unwrap();
            model.validate().unwrap();
            for m in &model.hmms {
                assert!(m.emissions.copula.rho > 1.0);
                assert!(m.emissions.lambda_p.iter().all(|&l| l > 0.0));
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, s, p) in [(1usize, 1usize, 0usize), (2, 3, 4), (3, 2, 1)] {
            let (layout, spec) = layout_and_spec(k, s, p);
            for _ in 0..1000 / 3 {
                let z: Vec<f64> =
                    (0..layout.dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let model = constrain(&layout, &spec, &z).unwrap();
                let z2 = unconstrain(&layout, &model).unwrap();
                for (a, b) in z.iter().zip(&z2) {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn non_finite_vector_rejected() {
        let (layout, spec) = layout_and_spec(2, 2, 1);
        let mut z = vec![0.0; layout.dim()];
        z[3] = f64::NAN;
        assert!(constrain(&layout, &spec, &z).is_err());
        assert!(constrain(&layout, &spec, &z[1..]).is_err());
    }

    #[test]
    fn independence_family_drops_rho() {
        let mut spec = ModelSpec::new(2, 2);
        spec.copula = CopulaFamily::Independence;
        let layout = ParamLayout::from_spec(&spec, 1);
        assert!(!layout.has_rho);
        let z = vec![0.1; layout.dim()];
        let model = constrain(&layout, &spec, &z).unwrap();
        assert_eq!(model.hmms[0].emissions.copula.effective_rho(), 1.0);
        let z2 = unconstrain(&layout, &model).unwrap();
        assert_eq!(z.len(), z2.len());
    }

    /// FD check of chain_grad and the Jacobian gradient through a scalar
    /// functional of the constrained parameters.
    #[test]
    fn chain_rule_matches_finite_differences() {
        let (layout, spec) = layout_and_spec(2, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);

        // arbitrary smooth functional with fixed random weights
        let w: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |model: &MixtureModel| -> f64 {
            let mut acc = 0.0;
            let mut i = 0;
            let mut take = |v: f64| {
                let r = w[i % w.len()] * v;
                i += 1;
                r
            };
            for j in 0..model.weights.alpha.len() {
                acc += take(model.weights.alpha[j]);
                for &b in &model.weights.beta[j] {
                    acc += take(b);
                }
            }
            for m in &model.hmms {
                for &x in &m.pi {
                    acc += take(x.ln());
                }
                for row in &m.phi {
                    for &x in row {
                        acc += take(x.ln());
                    }
                }
                for &l in m.emissions.lambda_p.iter().chain(&m.emissions.lambda_d) {
                    acc += take(l * l * 0.1);
                }
                acc += take((m.emissions.copula.rho).powi(2) * 0.05);
            }
            acc
        };

        let z: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = constrain(&layout, &spec, &z).unwrap();

        // analytic constrained-space gradient of f
        let mut g = ConstrainedGrad::zeros(&layout);
        {
            let mut i = 0;
            let mut wt = |_: ()| {
                let r = w[i % w.len()];
                i += 1;
                r
            };
            let s = layout.s;
            for j in 0..layout.k {
                g.d_alpha[j] = wt(());
                for l in 0..layout.p {
                    g.d_beta[j][l] = wt(());
                }
            }
            for (kk, m) in model.hmms.iter().enumerate() {
                for idx in 0..s {
                    g.d_log_pi[kk][idx] = wt(());
                }
                for r in 0..s {
                    for c in 0..s {
                        g.d_log_phi[kk][r * s + c] = wt(());
                    }
                }
                for idx in 0..s {
                    g.d_lambda_p[kk][idx] = wt(()) * 0.2 * m.emissions.lambda_p[idx];
                }
                for idx in 0..s {
                    g.d_lambda_d[kk][idx] = wt(()) * 0.2 * m.emissions.lambda_d[idx];
                }
                g.d_rho[kk] = wt(()) * 0.1 * m.emissions.copula.rho;
            }
        }
        let dz = chain_grad(&layout, &model, &g);

        let h = 1e-5;
        for j in 0..layout.dim() {
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let fd = (f(&constrain(&layout, &spec, &zp).unwrap())
                - f(&constrain(&layout, &spec, &zm).unwrap()))
                / (2.0 * h);
            assert!(
                (dz[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "coord {j}: {} vs {fd}",
                dz[j]
            );
        }
    }

    #[test]
    fn log_jacobian_gradient_matches_finite_differences() {
        let (layout, spec) = layout_and_spec(2, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let z: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let model = constrain(&layout, &spec, &z).unwrap();
        let (lj, grad) = log_jacobian_with_grad(&layout, &model, &z);
        assert!(lj.is_finite());

        let lj_of = |zz: &[f64]| {
            let m = constrain(&layout, &spec, zz).unwrap();
            log_jacobian_with_grad(&layout, &m, zz).0
        };
        let h = 1e-5;
        for j in 0..layout.dim() {
            let mut zp = z.clone();
            zp[j] += h;
            let mut zm = z.clone();
            zm[j] -= h;
            let fd = (lj_of(&zp) - lj_of(&zm)) / (2.0 * h);
            assert!(
                (grad[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "coord {j}: {} vs {fd}",
                grad[j]
            );
        }
    }
}
