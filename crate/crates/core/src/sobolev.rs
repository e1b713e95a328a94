//! Dimensional constants, the functional `J_{g,h}`, the Yamabe quotient and
//! the admissibility conditions on `(M, g, h)`.
//!
//! With `2* = 2n/(n−2)` and `K_n` the sharp Euclidean Sobolev constant,
//!
//! ```text
//! J(u) = [∫|∇u|² + ∫h u² − K_n⁻² (∫|u|^{2*})^{2/2*}] / ∫u²,   α(g,h) = −inf J.
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descent::{self, CriticalFunctional, DescentSettings};
use crate::error::{Error, Result};
use crate::linalg::wdot;
use crate::manifold::{critical_exponent, sphere_volume, DiscreteManifold, ScalarField};

/// The constants `n`, `2*`, `ω_n`, `K_n`, `K_n⁻²` and `n ω_n^{2/n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevConstants {
    pub n: usize,
    pub two_star: f64,
    pub omega_n: f64,
    pub k_n: f64,
    pub k_n_inv_sq: f64,
    pub sphere_bound: f64,
}

pub fn constants(n: usize) -> Result<SobolevConstants> {
    let two_star = critical_exponent(n)?;
    let nf = n as f64;
    let omega_n = sphere_volume(n);
    let k_n = 2.0 / (nf * (nf - 2.0)).sqrt() * omega_n.powf(-1.0 / nf);
    Ok(SobolevConstants {
        n,
        two_star,
        omega_n,
        k_n,
        k_n_inv_sq: 1.0 / (k_n * k_n),
        sphere_bound: nf * omega_n.powf(2.0 / nf),
    })
}

/// Coefficient `(n−2)/(4(n−1))` of the scalar curvature in the conformal
/// Laplacian.
pub fn conformal_coefficient(n: usize) -> f64 {
    let nf = n as f64;
    (nf - 2.0) / (4.0 * (nf - 1.0))
}

fn check_not_zero(u: &ScalarField) -> Result<()> {
    if u.values().iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateInput("field is identically zero".into()));
    }
    Ok(())
}

/// Evaluates `J_{g,h}(u)`; scale-invariant in `u`.
pub fn evaluate_j(m: &DiscreteManifold, h: &ScalarField, u: &ScalarField) -> Result<f64> {
    m.check_field(h)?;
    m.check_field(u)?;
    check_not_zero(u)?;
    let c = constants(m.dimension())?;
    Ok(JFunctional::new(m, h.values(), c).value(u.values()))
}

/// `α(g,h) = −J_min`.
pub fn alpha_from_minimum(j_min: f64) -> f64 {
    -j_min
}

/// `[∫|∇u|² + (n−2)/(4(n−1)) ∫S_g u²] / (∫|u|^{2*})^{2/2*}`.
pub fn yamabe_quotient(m: &DiscreteManifold, s_g: f64, u: &ScalarField) -> Result<f64> {
    m.check_field(u)?;
    check_not_zero(u)?;
    let p = critical_exponent(m.dimension())?;
    Ok(YamabeFunctional::new(m, s_g, p).value(u.values()))
}

/// The discrete `J` at an arbitrary (not necessarily normalized) field.
pub(crate) struct JFunctional<'a> {
    m: &'a DiscreteManifold,
    h: &'a [f64],
    p: f64,
    c: f64,
}

impl<'a> JFunctional<'a> {
    pub(crate) fn new(m: &'a DiscreteManifold, h: &'a [f64], c: SobolevConstants) -> Self {
        Self {
            m,
            h,
            p: c.two_star,
            c: c.k_n_inv_sq,
        }
    }

    /// Strong-form Euler–Lagrange residual `K u / w + (h + α) u − K_n⁻² u^{2*−1}`.
    pub(crate) fn el_residual(&self, u: &[f64], alpha: f64) -> Vec<f64> {
        let ku = self.m.stiffness().matvec(u);
        ku.iter()
            .zip(self.m.weights())
            .zip(u)
            .zip(self.h)
            .map(|(((k, w), x), h)| k / w + (h + alpha) * x - self.c * x.abs().powf(self.p - 1.0))
            .collect()
    }
}

impl CriticalFunctional for JFunctional<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        let w = self.m.weights();
        let grad = self.m.stiffness().quadratic_form(u);
        let mut pot = 0.0;
        let mut l2 = 0.0;
        let mut crit = 0.0;
        for ((wi, x), h) in w.iter().zip(u).zip(self.h) {
            pot += wi * h * x * x;
            l2 += wi * x * x;
            crit += wi * x.abs().powf(self.p);
        }
        (grad + pot - self.c * crit.powf(2.0 / self.p)) / l2
    }

    fn residual(&self, u: &[f64], value: f64) -> (Vec<f64>, f64) {
        let l2 = wdot(self.m.weights(), u, u);
        (self.el_residual(u, -value), 2.0 / l2)
    }
}

pub(crate) struct YamabeFunctional<'a> {
    m: &'a DiscreteManifold,
    curvature_term: f64,
    p: f64,
}

impl<'a> YamabeFunctional<'a> {
    pub(crate) fn new(m: &'a DiscreteManifold, s_g: f64, p: f64) -> Self {
        Self {
            m,
            curvature_term: conformal_coefficient(m.dimension()) * s_g,
            p,
        }
    }
}

impl CriticalFunctional for YamabeFunctional<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        let w = self.m.weights();
        let grad = self.m.stiffness().quadratic_form(u);
        let l2 = wdot(w, u, u);
        let crit: f64 = w.iter().zip(u).map(|(w, x)| w * x.abs().powf(self.p)).sum();
        (grad + self.curvature_term * l2) / crit.powf(2.0 / self.p)
    }

    /// Valid on the critical sphere, where the denominator equals one.
    fn residual(&self, u: &[f64], value: f64) -> (Vec<f64>, f64) {
        let ku = self.m.stiffness().matvec(u);
        let r = ku
            .iter()
            .zip(self.m.weights())
            .zip(u)
            .map(|((k, w), x)| k / w + self.curvature_term * x - value * x.abs().powf(self.p - 1.0))
            .collect();
        (r, 2.0)
    }
}

/// Settings of the upper-bound search for the Yamabe invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YamabeEstimateOptions {
    /// Number of starts: the constant plus `starts − 1` random positive fields.
    pub starts: usize,
    pub max_iterations: usize,
    /// Log-normal amplitude of the random starts.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for YamabeEstimateOptions {
    fn default() -> Self {
        Self {
            starts: 4,
            max_iterations: 300,
            sigma: 1.0,
            seed: 0,
        }
    }
}

/// Upper bound on the (discrete) Yamabe invariant: the smallest quotient
/// reached by preconditioned descent from the constant and from random
/// smooth positive fields.
pub fn estimate_yamabe_invariant(
    m: &DiscreteManifold,
    s_g: f64,
    opts: &YamabeEstimateOptions,
) -> Result<f64> {
    let p = critical_exponent(m.dimension())?;
    if opts.starts == 0 {
        return Err(Error::config("starts", "at least one start is required"));
    }
    let w = m.weights();
    let pre = descent::SobolevPreconditioner::new(m)?;
    let f = YamabeFunctional::new(m, s_g, p);
    let settings = DescentSettings {
        max_iterations: opts.max_iterations,
        residual_tol: 1e-10,
        initial_step: 1.0,
        max_step: 1e3,
        backtrack: 0.5,
        armijo: 1e-4,
    };
    let mut best = f.value(&vec![1.0; m.node_count()]);
    for start in 0..opts.starts {
        let u0 = if start == 0 {
            vec![1.0; m.node_count()]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(start as u64));
            descent::smooth_lognormal_start(w, &pre.chol, &mut rng, opts.sigma)
        };
        let out = descent::descend(w, Some(&pre), &f, u0, p, &settings)?;
        best = best.min(out.value);
    }
    Ok(best)
}

/// The two sufficient conditions for `J` to attain its infimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub mu_estimate: f64,
    pub k_inv_sq: f64,
    /// `mu_estimate < K_n⁻²`.
    pub aubin_ok: bool,
    /// `½(K_n⁻² − μ) − ‖h − (n−2)/(4(n−1)) S_g‖_∞`.
    pub h_norm_gap: f64,
    pub h_ok: bool,
}

/// Largest admissible sup-norm distance of `h` from the centered value.
pub fn admissible_radius(k_inv_sq: f64, mu_estimate: f64) -> f64 {
    0.5 * (k_inv_sq - mu_estimate)
}

pub fn check_admissibility(
    m: &DiscreteManifold,
    s_g: f64,
    h: &ScalarField,
    mu_estimate: f64,
) -> Result<AdmissibilityReport> {
    m.check_field(h)?;
    let c = constants(m.dimension())?;
    let center = conformal_coefficient(m.dimension()) * s_g;
    let dist = h
        .values()
        .iter()
        .fold(0.0f64, |acc, x| acc.max((x - center).abs()));
    let radius = admissible_radius(c.k_n_inv_sq, mu_estimate);
    Ok(AdmissibilityReport {
        mu_estimate,
        k_inv_sq: c.k_n_inv_sq,
        aubin_ok: mu_estimate < c.k_n_inv_sq,
        h_norm_gap: radius - dist,
        h_ok: dist <= radius,
    })
}
