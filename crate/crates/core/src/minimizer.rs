//! Minimization of `J_{g,h}` over positive fields with `Σ w u^{2*} = 1`.
//!
//! Each restart runs the Sobolev-preconditioned projected gradient descent
//! until the Euler–Lagrange residual is small, then polishes with Newton's
//! method on the bordered system for `(u, α)`:
//!
//! ```text
//! [ K + W diag(h + α − (2*−1) K_n⁻² u^{2*−2})   W u ] [δu]   [ −W r          ]
//! [ 2* (w u^{2*−1})ᵀ                              0  ] [δα] = [ 1 − Σ w u^{2*} ]
//! ```
//!
//! Restarts run in parallel and are reduced by `(J, restart index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{self, CriticalFunctional, DescentSettings, SobolevPreconditioner};
use crate::error::{Error, Result};
use crate::linalg::{minres, wdot, SparseLu, SymCsr};
use crate::manifold::{assemble_weighted_operators, DiscreteManifold, ScalarField};
use crate::sobolev::{constants, JFunctional, SobolevConstants};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizerOptions {
    /// Budget of accepted descent steps per restart.
    pub max_iterations: usize,
    pub el_residual_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    /// Step reduction factor of the backtracking line search, in `(0, 1)`.
    pub backtrack: f64,
    /// Armijo sufficient-decrease constant, in `(0, 1)`.
    pub armijo: f64,
    /// Precondition the gradient with `(K + W)⁻¹ W`.
    pub precondition: bool,
    /// Number of starts: the constant plus `restarts − 1` random ones.
    pub restarts: usize,
    /// Log-normal amplitude of the random starts.
    pub perturbation: f64,
    /// Residual below which Newton polishing takes over; 0 disables it.
    pub newton_threshold: f64,
    pub newton_steps: usize,
    /// `max u / mean u` above which a state is flagged as concentrating.
    pub blowup_ratio: f64,
    pub seed: u64,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            el_residual_tol: 1e-8,
            initial_step: 1.0,
            max_step: 1e3,
            backtrack: 0.5,
            armijo: 1e-4,
            precondition: true,
            restarts: 5,
            perturbation: 0.5,
            newton_threshold: 1e-5,
            newton_steps: 12,
            blowup_ratio: 1e4,
            seed: 0,
        }
    }
}

impl MinimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("el_residual_tol", self.el_residual_tol),
            ("initial_step", self.initial_step),
            ("max_step", self.max_step),
            ("blowup_ratio", self.blowup_ratio),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::config("backtrack", "must lie in (0, 1)"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::config("armijo", "must lie in (0, 1)"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts", "must be at least 1"));
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return Err(Error::config("perturbation", "must be nonnegative"));
        }
        if !(self.newton_threshold >= 0.0) {
            return Err(Error::config("newton_threshold", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Summary of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub j_value: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub newton_steps: usize,
    pub converged: bool,
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerState {
    /// Positive, normalized so that `Σ w u^{2*} = 1`.
    pub u: ScalarField,
    pub j_value: f64,
    /// `−J(u)`.
    pub alpha: f64,
    pub el_residual: f64,
    /// Descent steps of the selected restart.
    pub iterations: usize,
    pub newton_steps: usize,
    pub converged: bool,
    /// `J` after every accepted step of the selected restart.
    pub trace: Vec<f64>,
    /// Index of the selected restart (0 is the constant start).
    pub restart: usize,
    /// `max u / mean u`.
    pub concentration: f64,
    /// Largest single-node share `w_i u_i^{2*}` of the critical mass.
    pub peak_mass_fraction: f64,
    pub blow_up: bool,
    pub restarts: Vec<RestartSummary>,
    /// Other converged states whose `J` equals the selected one to
    /// tolerance but which differ from it as fields.
    pub equal_value_states: Vec<ScalarField>,
}

struct RunOutcome {
    u: Vec<f64>,
    value: f64,
    residual: f64,
    iterations: usize,
    newton_steps: usize,
    trace: Vec<f64>,
}

/// Solves `S x = b` for both right-hand sides: MINRES preconditioned by the
/// Sobolev metric first, a sparse LU when that stalls (strongly concentrated
/// states).
fn solve_newton_pair(
    s_mat: &SymCsr,
    pre: &SobolevPreconditioner,
    b1: &[f64],
    b2: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    const TOL: f64 = 1e-12;
    const MAX_ITERATIONS: usize = 300;
    let a = minres(s_mat, b1, &pre.chol, TOL, MAX_ITERATIONS);
    if a.converged {
        let b = minres(s_mat, b2, &pre.chol, TOL, MAX_ITERATIONS);
        if b.converged {
            return Some((a.x, b.x));
        }
    }
    let lu = SparseLu::factor(s_mat).ok()?;
    Some((lu.solve(b1), lu.solve(b2)))
}

fn newton_polish(
    m: &DiscreteManifold,
    f: &JFunctional,
    h: &[f64],
    c: &SobolevConstants,
    pre: &SobolevPreconditioner,
    run: &mut RunOutcome,
    max_steps: usize,
    tol: f64,
) {
    let w = m.weights();
    let p = c.two_star;
    let cc = c.k_n_inv_sq;
    for _ in 0..max_steps {
        if run.residual <= tol {
            return;
        }
        let u = &run.u;
        let alpha = -run.value;
        let r = f.el_residual(u, alpha);
        let shift: Vec<f64> = w
            .iter()
            .zip(h)
            .zip(u)
            .map(|((w, h), x)| w * (h + alpha - (p - 1.0) * cc * x.powf(p - 2.0)))
            .collect();
        let s_mat = m.stiffness().plus_diagonal(&shift);
        let rhs1: Vec<f64> = w.iter().zip(&r).map(|(w, r)| -w * r).collect();
        let rhs2: Vec<f64> = w.iter().zip(u).map(|(w, x)| -w * x).collect();
        let Some((x1, x2)) = solve_newton_pair(&s_mat, pre, &rhs1, &rhs2) else {
            return;
        };
        let g: Vec<f64> = w.iter().zip(u).map(|(w, x)| p * w * x.powf(p - 1.0)).collect();
        let mass: f64 = w.iter().zip(u).map(|(w, x)| w * x.powf(p)).sum();
        let gx1: f64 = g.iter().zip(&x1).map(|(a, b)| a * b).sum();
        let gx2: f64 = g.iter().zip(&x2).map(|(a, b)| a * b).sum();
        let dalpha = (1.0 - mass - gx1) / gx2;
        let mut next: Vec<f64> = u
            .iter()
            .zip(&x1)
            .zip(&x2)
            .map(|((u, a), b)| u + a + dalpha * b)
            .collect();
        if !next.iter().all(|&x| x > 0.0 && x.is_finite()) {
            return;
        }
        if descent::normalize(w, &mut next, p).is_err() {
            return;
        }
        let value = f.value(&next);
        let (res_vec, _) = f.residual(&next, value);
        let residual = descent::weighted_norm(w, &res_vec);
        // Near a critical point J changes at second order; allow for the
        // round-off of evaluating it.
        let slack = 64.0 * f64::EPSILON * (1.0 + run.value.abs());
        if !(residual < run.residual && value <= run.value + slack) {
            return;
        }
        run.u = next;
        run.value = value;
        run.residual = residual;
        run.newton_steps += 1;
        run.trace.push(value);
    }
}

fn run_single(
    m: &DiscreteManifold,
    h: &[f64],
    c: &SobolevConstants,
    pre: Option<&SobolevPreconditioner>,
    newton_pre: &SobolevPreconditioner,
    u0: Vec<f64>,
    opts: &MinimizerOptions,
) -> Result<RunOutcome> {
    let w = m.weights();
    let f = JFunctional::new(m, h, *c);
    let mut settings = DescentSettings {
        max_iterations: opts.max_iterations,
        residual_tol: opts.el_residual_tol.max(opts.newton_threshold),
        initial_step: opts.initial_step,
        max_step: opts.max_step,
        backtrack: opts.backtrack,
        armijo: opts.armijo,
    };
    let out = descent::descend(w, pre, &f, u0, c.two_star, &settings)?;
    if out.stalled {
        log::debug!(
            "line search stalled after {} iterations at residual {:e}",
            out.iterations,
            out.residual_norm
        );
    }
    let mut run = RunOutcome {
        u: out.u,
        value: out.value,
        residual: out.residual_norm,
        iterations: out.iterations,
        newton_steps: 0,
        trace: out.trace,
    };
    if opts.newton_threshold > 0.0 {
        newton_polish(m, &f, h, c, newton_pre, &mut run, opts.newton_steps, opts.el_residual_tol);
        if run.residual > opts.el_residual_tol && run.iterations < opts.max_iterations {
            settings.residual_tol = opts.el_residual_tol;
            settings.max_iterations = opts.max_iterations - run.iterations;
            let more = descent::descend(w, pre, &f, run.u.clone(), c.two_star, &settings)?;
            run.trace.extend_from_slice(&more.trace[1..]);
            run.iterations += more.iterations;
            run.u = more.u;
            run.value = more.value;
            run.residual = more.residual_norm;
            newton_polish(m, &f, h, c, newton_pre, &mut run, opts.newton_steps, opts.el_residual_tol);
        }
    }
    Ok(run)
}

fn concentration(w: &[f64], u: &[f64]) -> f64 {
    let vol: f64 = w.iter().sum();
    let mean = w.iter().zip(u).map(|(w, x)| w * x).sum::<f64>() / vol;
    u.iter().fold(0.0f64, |a, &x| a.max(x)) / mean
}

/// Minimizes `J_{g,h}`; returns the best state over all restarts, preferring
/// converged ones.
pub fn minimize_j(
    m: &DiscreteManifold,
    h: &ScalarField,
    opts: &MinimizerOptions,
) -> Result<MinimizerState> {
    opts.validate()?;
    m.check_field(h)?;
    let c = constants(m.dimension())?;
    let w = m.weights();
    let pre = SobolevPreconditioner::new(m)?;
    let precond = opts.precondition.then_some(&pre);

    let runs: Vec<RunOutcome> = (0..opts.restarts)
        .into_par_iter()
        .map(|index| {
            let u0 = if index == 0 {
                vec![1.0; m.node_count()]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(index as u64));
                descent::smooth_lognormal_start(w, &pre.chol, &mut rng, opts.perturbation)
            };
            run_single(m, h.values(), &c, precond, &pre, u0, opts)
        })
        .collect::<Result<_>>()?;

    let converged = |r: &RunOutcome| r.residual <= opts.el_residual_tol;
    let any_converged = runs.iter().any(converged);
    let best = (0..runs.len())
        .filter(|&i| !any_converged || converged(&runs[i]))
        .min_by(|&a, &b| runs[a].value.total_cmp(&runs[b].value).then(a.cmp(&b)))
        .expect("at least one restart");

    let summaries = runs
        .iter()
        .enumerate()
        .map(|(index, r)| RestartSummary {
            index,
            j_value: r.value,
            el_residual: r.residual,
            iterations: r.iterations,
            newton_steps: r.newton_steps,
            converged: converged(r),
            concentration: concentration(w, &r.u),
        })
        .collect();

    let chosen = &runs[best];
    let tie_tol = 1e-9 * (1.0 + chosen.value.abs());
    let mut equal_value_states: Vec<ScalarField> = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        if i == best || !converged(r) || (r.value - chosen.value).abs() > tie_tol {
            continue;
        }
        let distinct_from = |u: &[f64]| {
            r.u.iter().zip(u).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) > 1e-6
        };
        if distinct_from(&chosen.u) && equal_value_states.iter().all(|s| distinct_from(s.values())) {
            equal_value_states.push(ScalarField::new(r.u.clone())?);
        }
    }

    let ratio = concentration(w, &chosen.u);
    let peak = w
        .iter()
        .zip(&chosen.u)
        .fold(0.0f64, |a, (w, x)| a.max(w * x.powf(c.two_star)));
    let state = MinimizerState {
        u: ScalarField::new(chosen.u.clone())?,
        j_value: chosen.value,
        alpha: -chosen.value,
        el_residual: chosen.residual,
        iterations: chosen.iterations,
        newton_steps: chosen.newton_steps,
        converged: converged(chosen),
        trace: chosen.trace.clone(),
        restart: best,
        concentration: ratio,
        peak_mass_fraction: peak,
        blow_up: ratio > opts.blowup_ratio,
        restarts: summaries,
        equal_value_states,
    };
    if state.blow_up {
        log::warn!("minimizer state concentrates: max/mean = {ratio:.3e}");
    }
    if !state.converged {
        log::warn!(
            "minimizer did not reach the residual tolerance: {:.3e} > {:.3e}",
            state.el_residual,
            opts.el_residual_tol
        );
    }
    Ok(state)
}

/// `‖K u / w + (h + α) u − K_n⁻² u^{2*−1}‖_{L²(w)}`.
pub fn euler_lagrange_residual(
    m: &DiscreteManifold,
    h: &ScalarField,
    alpha: f64,
    u: &ScalarField,
) -> Result<f64> {
    m.check_field(h)?;
    m.check_field(u)?;
    u.check_positive()?;
    let c = constants(m.dimension())?;
    let r = JFunctional::new(m, h.values(), c).el_residual(u.values(), alpha);
    Ok(descent::weighted_norm(m.weights(), &r))
}

fn check_normalized(m: &DiscreteManifold, u: &ScalarField, p: f64) -> Result<()> {
    let mass: f64 = m
        .weights()
        .iter()
        .zip(u.values())
        .map(|(w, x)| w * x.powf(p))
        .sum();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::DegenerateInput(format!(
            "field must satisfy Σ w u^(2*) = 1, found {mass}"
        )));
    }
    Ok(())
}

/// Second-order coefficient of `J(u(1 + t v))` (up to the factor `1/Σ w u²`):
///
/// ```text
/// Q(v) = (u v)ᵀ K (u v) + Σ w (h + α) u² v² − K_n⁻² (2*−1) Σ w v² u^{2*}
///        + K_n⁻² (2*−2) (Σ w v u^{2*})².
/// ```
pub fn second_variation_form(
    m: &DiscreteManifold,
    h: &ScalarField,
    alpha: f64,
    u: &ScalarField,
    v: &ScalarField,
) -> Result<f64> {
    m.check_field(h)?;
    m.check_field(u)?;
    m.check_field(v)?;
    u.check_positive()?;
    let c = constants(m.dimension())?;
    let p = c.two_star;
    check_normalized(m, u, p)?;
    let w = m.weights();
    let uv: Vec<f64> = u.values().iter().zip(v.values()).map(|(a, b)| a * b).collect();
    let grad = m.stiffness().quadratic_form(&uv);
    let mut pot = 0.0;
    let mut crit2 = 0.0;
    let mut crit1 = 0.0;
    for (((w, h), x), y) in w.iter().zip(h.values()).zip(u.values()).zip(v.values()) {
        let up = x.powf(p);
        pot += w * (h + alpha) * x * x * y * y;
        crit2 += w * y * y * up;
        crit1 += w * y * up;
    }
    let k = c.k_n_inv_sq;
    Ok(grad + pot - k * (p - 1.0) * crit2 + k * (p - 2.0) * crit1 * crit1)
}

/// The same quadratic form written in the conformal metric:
/// `vᵀ K_u v − n ω_n^{2/n} Σ w u^{2*} (v − v̄)²` with `v̄ = Σ w u^{2*} v`.
pub fn conformal_hessian_form(
    m: &DiscreteManifold,
    u: &ScalarField,
    v: &ScalarField,
) -> Result<f64> {
    m.check_field(v)?;
    let c = constants(m.dimension())?;
    check_normalized(m, u, c.two_star)?;
    let ops = assemble_weighted_operators(m, u)?;
    let vbar: f64 = ops.mass.iter().zip(v.values()).map(|(a, b)| a * b).sum();
    let centered: Vec<f64> = v.values().iter().map(|x| x - vbar).collect();
    Ok(ops.stiffness.quadratic_form(v.values()) - c.sphere_bound * wdot(&ops.mass, &centered, &centered))
}
