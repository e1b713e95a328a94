use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{Chart, DiscreteManifold, GridSpec, ScalarField};
use crate::minimizer::{conformal_hessian_form, minimize_j, second_variation_form};
use crate::spectrum::{conformal_identity_residual, laplacian_spectrum};

use super::config::{ExperimentConfig, RunSettings};
use super::perturbation::smooth_perturbation;

/// Errors below this level are treated as round-off: no order is computed.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;

/// Which quantities the refinement study tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementChecks {
    /// First nonzero eigenvalue of the flat Laplacian against its continuum value.
    pub lambda1: bool,
    /// Conformal Laplacian identity residuals for two smooth test pairs.
    pub identity: bool,
    /// Relative difference of the two second-variation forms at the minimizer.
    pub second_variation: bool,
}

impl Default for RefinementChecks {
    fn default() -> Self {
        Self {
            lambda1: true,
            identity: true,
            second_variation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementLevel {
    pub level: usize,
    pub resolution: String,
    pub nodes: usize,
    /// `(Vol / N)^{1/n}`.
    pub mesh_size: f64,
    pub lambda1: Option<f64>,
    pub lambda1_exact: Option<f64>,
    pub lambda1_error: Option<f64>,
    /// Residual for `u = 1 + ½ f(x₁)`, `v = g(x₂)` (one coordinate each).
    pub identity_separable: Option<f64>,
    /// Residual for `u = 1 + ½ f(x₁) f(x₂)`, `v = g(x₁) g(x₂)`.
    pub identity_coupled: Option<f64>,
    /// `max |H(v) − Q(v)| / |H(v)|` over smooth test directions.
    pub second_variation_gap: Option<f64>,
}

/// Observed orders between consecutive levels; `None` where an error is at
/// round-off or missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservedOrders {
    pub lambda1: Vec<Option<f64>>,
    pub identity_separable: Vec<Option<f64>>,
    pub identity_coupled: Vec<Option<f64>>,
    pub second_variation: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTable {
    pub config: ExperimentConfig,
    pub checks: RefinementChecks,
    pub levels: Vec<RefinementLevel>,
    pub orders: ObservedOrders,
}

/// Continuum `(λ₁, volume, dimension)` of the flat metric of a spec.
pub fn continuum_lambda1(spec: &GridSpec) -> (f64, f64, usize) {
    let (lambda, vol, n, normalize) = match spec {
        GridSpec::FlatTorus {
            lengths,
            normalize_volume,
            ..
        } => {
            let longest = lengths.iter().fold(0.0f64, |a, &b| a.max(b));
            let lambda = (TAU / longest).powi(2);
            (lambda, lengths.iter().product(), lengths.len(), *normalize_volume)
        }
        GridSpec::RoundSphere2 {
            radius,
            normalize_volume,
            ..
        } => (
            2.0 / (radius * radius),
            2.0 * TAU * radius * radius,
            2,
            *normalize_volume,
        ),
        GridSpec::Product {
            a,
            b,
            normalize_volume,
        } => {
            let (la, va, na) = continuum_lambda1(a);
            let (lb, vb, nb) = continuum_lambda1(b);
            (la.min(lb), va * vb, na + nb, *normalize_volume)
        }
    };
    if normalize {
        (lambda * vol.powf(2.0 / n as f64), 1.0, n)
    } else {
        (lambda, vol, n)
    }
}

/// Chart-local smooth functions `(f, g)`: `sin`/`cos` of the periodic
/// coordinate, or the `z`/`x` ambient coordinate on a sphere.
fn chart_pair(chart: &Chart, coords: &[f64]) -> (f64, f64) {
    match *chart {
        Chart::Periodic { length } => {
            let t = TAU * coords[0] / length;
            (t.sin(), t.cos())
        }
        Chart::Sphere { radius } => (coords[2] / radius, coords[0] / radius),
    }
}

fn chart_values(m: &DiscreteManifold, i: usize) -> Vec<(f64, f64)> {
    let coords = m.node_coords(i);
    let mut offset = 0;
    m.charts()
        .iter()
        .map(|c| {
            let width = match c {
                Chart::Periodic { .. } => 1,
                Chart::Sphere { .. } => 3,
            };
            let v = chart_pair(c, &coords[offset..offset + width]);
            offset += width;
            v
        })
        .collect()
}

/// The separable and coupled `(u, v)` test pairs on a grid.
pub fn identity_test_pairs(m: &DiscreteManifold) -> Result<[(ScalarField, ScalarField); 2]> {
    let n = m.node_count();
    let mut su = Vec::with_capacity(n);
    let mut sv = Vec::with_capacity(n);
    let mut cu = Vec::with_capacity(n);
    let mut cv = Vec::with_capacity(n);
    for i in 0..n {
        let vals = chart_values(m, i);
        let (f0, g0) = vals[0];
        let (f1, g1) = *vals.get(1).unwrap_or(&(1.0, 1.0));
        su.push(1.0 + 0.5 * f0);
        sv.push(if vals.len() > 1 { g1 } else { g0 });
        cu.push(1.0 + 0.5 * f0 * f1);
        cv.push(g0 * g1);
    }
    Ok([
        (ScalarField::new(su)?, ScalarField::new(sv)?),
        (ScalarField::new(cu)?, ScalarField::new(cv)?),
    ])
}

fn orders(errors: &[Option<f64>], mesh: &[f64]) -> Vec<Option<f64>> {
    (0..errors.len().saturating_sub(1))
        .map(|i| match (errors[i], errors[i + 1]) {
            (Some(a), Some(b)) if a > ROUNDOFF_FLOOR && b > ROUNDOFF_FLOOR => {
                Some((a / b).ln() / (mesh[i] / mesh[i + 1]).ln())
            }
            _ => None,
        })
        .collect()
}

fn second_variation_gap(config: &ExperimentConfig, m: &DiscreteManifold) -> Result<f64> {
    let h = config.h.realize(m, config.perturbation_seed(0))?;
    let state = minimize_j(m, &h, &config.minimizer_options())?;
    if !state.converged {
        return Err(Error::NumericalFailure(format!(
            "minimizer residual {:e} above tolerance on {} nodes",
            state.el_residual,
            m.node_count()
        )));
    }
    let mut worst = 0.0f64;
    for k in 0..4 {
        let v = smooth_perturbation(m, config.perturbation_seed(1000 + k))?;
        let q = second_variation_form(m, &h, state.alpha, &state.u, &v)?;
        let hform = conformal_hessian_form(m, &state.u, &v)?;
        worst = worst.max((hform - q).abs() / hform.abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Repeats the selected checks over `levels` successive refinements of the
/// config's grid and reports observed convergence orders.
pub fn run_refinement_study(
    config: &ExperimentConfig,
    levels: usize,
    checks: RefinementChecks,
    settings: &RunSettings,
) -> Result<RefinementTable> {
    if levels < 2 {
        return Err(Error::config("levels", format!("need at least 2 levels, got {levels}")));
    }
    let mut specs = vec![config.manifold.clone()];
    for _ in 1..levels {
        let next = specs.last().expect("nonempty").refined();
        specs.push(next);
    }
    let finest = specs.last().expect("nonempty").node_count();
    config.check_size(finest, settings)?;
    config.validate(&RunSettings {
        override_size: true,
        ..*settings
    })?;

    let spectrum_opts = config.spectrum_options();
    let mut rows = Vec::with_capacity(levels);
    for (level, spec) in specs.iter().enumerate() {
        let m = spec.build()?;
        let mesh_size = (m.volume() / m.node_count() as f64).powf(1.0 / m.dimension() as f64);
        let mut row = RefinementLevel {
            level,
            resolution: spec.resolution_label(),
            nodes: m.node_count(),
            mesh_size,
            lambda1: None,
            lambda1_exact: None,
            lambda1_error: None,
            identity_separable: None,
            identity_coupled: None,
            second_variation_gap: None,
        };
        if checks.lambda1 {
            let flat = laplacian_spectrum(&m, &spectrum_opts)?;
            let (exact, _, _) = continuum_lambda1(spec);
            row.lambda1 = Some(flat.lambda1);
            row.lambda1_exact = Some(exact);
            row.lambda1_error = Some((flat.lambda1 - exact).abs() / exact);
        }
        if checks.identity {
            let [(su, sv), (cu, cv)] = identity_test_pairs(&m)?;
            row.identity_separable = Some(conformal_identity_residual(&m, &su, &sv)?);
            row.identity_coupled = Some(conformal_identity_residual(&m, &cu, &cv)?);
        }
        if checks.second_variation {
            row.second_variation_gap = Some(second_variation_gap(config, &m)?);
        }
        log::info!("refinement level {level} ({}) done", row.resolution);
        rows.push(row);
    }

    let mesh: Vec<f64> = rows.iter().map(|r| r.mesh_size).collect();
    let column = |f: fn(&RefinementLevel) -> Option<f64>| -> Vec<Option<f64>> { rows.iter().map(f).collect() };
    let orders = ObservedOrders {
        lambda1: orders(&column(|r| r.lambda1_error), &mesh),
        identity_separable: orders(&column(|r| r.identity_separable), &mesh),
        identity_coupled: orders(&column(|r| r.identity_coupled), &mesh),
        second_variation: orders(&column(|r| r.second_variation_gap), &mesh),
    };
    Ok(RefinementTable {
        config: config.clone(),
        checks,
        levels: rows,
        orders,
    })
}
