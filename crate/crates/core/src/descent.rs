//! Sobolev-preconditioned projected gradient descent on the critical sphere
//! `{u > 0 : Σ w u^{2*} = 1}`, shared by the J minimizer and the Yamabe
//! quotient estimate.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{wdot, Cholesky, SymCsr};
use crate::manifold::DiscreteManifold;

/// Floor applied after taking absolute values, before renormalizing.
pub(crate) const POSITIVITY_FLOOR: f64 = 1e-14;

/// A scale-invariant functional restricted to the critical sphere.
pub(crate) trait CriticalFunctional {
    /// Value at a normalized positive field.
    fn value(&self, u: &[f64]) -> f64;

    /// Strong-form residual `r` and scale `s` such that the derivative of the
    /// functional in direction `φ` is `s · Σ w r φ`.
    fn residual(&self, u: &[f64], value: f64) -> (Vec<f64>, f64);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DescentSettings {
    pub max_iterations: usize,
    /// Stop once `‖r‖_w` drops to this level.
    pub residual_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub backtrack: f64,
    pub armijo: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct DescentOutcome {
    pub u: Vec<f64>,
    pub value: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Value after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    /// The line search could not find an acceptable step.
    pub stalled: bool,
}

/// The Sobolev metric `P = K + W` and its factorization.
pub(crate) struct SobolevPreconditioner {
    pub matrix: SymCsr,
    pub chol: Cholesky,
}

impl SobolevPreconditioner {
    pub(crate) fn new(m: &DiscreteManifold) -> Result<Self> {
        let matrix = m.stiffness().plus_diagonal(m.weights());
        let chol = Cholesky::factor_ordered(&matrix, m.elimination_order())?;
        Ok(Self { matrix, chol })
    }
}

/// Scales `u` in place so that `Σ w |u|^p = 1`.
pub(crate) fn normalize(w: &[f64], u: &mut [f64], p: f64) -> Result<()> {
    let mass: f64 = w.iter().zip(u.iter()).map(|(w, x)| w * x.abs().powf(p)).sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "cannot normalize a field with critical mass {mass:e}"
        )));
    }
    let s = mass.powf(-1.0 / p);
    u.iter_mut().for_each(|x| *x *= s);
    Ok(())
}

pub(crate) fn weighted_norm(w: &[f64], r: &[f64]) -> f64 {
    wdot(w, r, r).sqrt()
}

/// Positive start `exp(σ z)` where `z` is a white-noise field smoothed by
/// `(K + W)⁻¹ W`, centered and scaled to unit sup norm.
pub(crate) fn smooth_lognormal_start(
    w: &[f64],
    smoother: &Cholesky,
    rng: &mut impl Rng,
    sigma: f64,
) -> Vec<f64> {
    let mut z: Vec<f64> = w
        .iter()
        .map(|wi| wi * rng.sample::<f64, _>(StandardNormal))
        .collect();
    smoother.solve_in_place(&mut z);
    let vol: f64 = w.iter().sum();
    let mean = wdot(w, &z, &vec![1.0; z.len()]) / vol;
    z.iter_mut().for_each(|x| *x -= mean);
    let sup = z.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sup > 0.0 {
        z.iter_mut().for_each(|x| *x /= sup);
    }
    z.into_iter().map(|x| (sigma * x).exp()).collect()
}

/// Runs the descent from `u0` (normalized internally).
///
/// One step: `d = P⁻¹ W r` with `P = K + W`, trial
/// `u' = normalize(max(|u − τd|, floor))` accepted under the Armijo rule,
/// otherwise `τ` is backtracked. The first trial step of each iteration is
/// the Barzilai–Borwein length `sᵀPs / sᵀW(r_k − r_{k−1})` of the previous
/// move `s`, clamped to `[initial_step·10⁻³, max_step]`.
pub(crate) fn descend(
    w: &[f64],
    precond: Option<&SobolevPreconditioner>,
    f: &impl CriticalFunctional,
    u0: Vec<f64>,
    p: f64,
    settings: &DescentSettings,
) -> Result<DescentOutcome> {
    let mut u = u0;
    u.iter_mut().for_each(|x| *x = x.abs().max(POSITIVITY_FLOOR));
    normalize(w, &mut u, p)?;
    let mut value = f.value(&u);
    if !value.is_finite() {
        return Err(Error::NumericalFailure(format!("initial value {value} is not finite")));
    }
    let mut trace = vec![value];
    let mut tau = settings.initial_step;
    let mut stalled = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; u.len()];
    let (mut r, mut scale) = f.residual(&u, value);
    let mut res = weighted_norm(w, &r);

    while iterations < settings.max_iterations && res > settings.residual_tol {
        let mut d: Vec<f64> = w.iter().zip(&r).map(|(w, r)| w * r).collect();
        match precond {
            Some(pre) => pre.chol.solve_in_place(&mut d),
            None => d.iter_mut().zip(w).for_each(|(x, w)| *x /= w),
        }
        let slope = scale * wdot(w, &r, &d);
        if !(slope > 0.0) {
            stalled = true;
            break;
        }
        let accepted = loop {
            for ((t, x), dx) in trial.iter_mut().zip(&u).zip(&d) {
                *t = (x - tau * dx).abs().max(POSITIVITY_FLOOR);
            }
            normalize(w, &mut trial, p)?;
            let v = f.value(&trial);
            if v.is_nan() {
                return Err(Error::NumericalFailure(format!(
                    "line search produced NaN at iteration {iterations} (step {tau:e})"
                )));
            }
            if v <= value - settings.armijo * tau * slope {
                break Some(v);
            }
            tau *= settings.backtrack;
            if tau < 1e-14 * settings.initial_step {
                break None;
            }
        };
        let Some(v) = accepted else {
            stalled = true;
            break;
        };
        let step: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
        std::mem::swap(&mut u, &mut trial);
        value = v;
        trace.push(value);
        iterations += 1;
        let r_old = std::mem::take(&mut r);
        (r, scale) = f.residual(&u, value);
        res = weighted_norm(w, &r);

        let metric = match precond {
            Some(pre) => pre.matrix.quadratic_form(&step),
            None => wdot(w, &step, &step),
        };
        let dr: Vec<f64> = r.iter().zip(&r_old).map(|(a, b)| a - b).collect();
        let curvature = wdot(w, &step, &dr);
        tau = if curvature > 0.0 && metric > 0.0 {
            (metric / curvature).clamp(1e-3 * settings.initial_step, settings.max_step)
        } else {
            (2.0 * tau).min(settings.max_step)
        };
    }
    Ok(DescentOutcome {
        u,
        value,
        residual_norm: res,
        iterations,
        trace,
        stalled,
    })
}
