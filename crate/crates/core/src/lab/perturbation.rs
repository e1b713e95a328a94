//! Smooth random fields for perturbing `h`: truncated low-frequency
//! expansions in the coordinates of each chart.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::{Chart, DiscreteManifold, ScalarField};

/// Largest total frequency level of a basis product: Fourier shells
/// `|k|² ≤ 3` on tori, harmonic degree `≤ 3` on spheres.
pub const MAX_LEVEL: usize = 3;

#[derive(Debug, Clone, Copy)]
enum Mode {
    One,
    Cos { length: f64 },
    Sin { length: f64 },
    /// `(x/r)^a (y/r)^b (z/r)^c`.
    Monomial { powers: [u32; 3], radius: f64 },
}

impl Mode {
    fn eval(&self, coords: &[f64]) -> f64 {
        match *self {
            Mode::One => 1.0,
            Mode::Cos { length } => (TAU * coords[0] / length).cos(),
            Mode::Sin { length } => (TAU * coords[0] / length).sin(),
            Mode::Monomial { powers, radius } => powers
                .iter()
                .zip(coords)
                .map(|(&p, &x)| (x / radius).powi(p as i32))
                .product(),
        }
    }
}

/// Basis functions of one chart together with their frequency level.
fn chart_modes(chart: &Chart) -> Vec<(usize, Mode)> {
    match *chart {
        Chart::Periodic { length } => {
            let mut modes = vec![(0, Mode::One)];
            for k in 1.. {
                let level = k * k;
                if level > MAX_LEVEL {
                    break;
                }
                let length = length / k as f64;
                modes.push((level, Mode::Cos { length }));
                modes.push((level, Mode::Sin { length }));
            }
            modes
        }
        Chart::Sphere { radius } => {
            let mut modes = Vec::new();
            for degree in 0..=MAX_LEVEL as u32 {
                for a in (0..=degree).rev() {
                    for b in (0..=degree - a).rev() {
                        let powers = [a, b, degree - a - b];
                        modes.push((degree as usize, Mode::Monomial { powers, radius }));
                    }
                }
            }
            modes
        }
    }
}

/// Products of chart modes with total level in `1..=MAX_LEVEL`, in a fixed
/// lexicographic order.
fn product_basis(charts: &[Chart]) -> Vec<Vec<Mode>> {
    let mut partial: Vec<(usize, Vec<Mode>)> = vec![(0, Vec::new())];
    for chart in charts {
        let modes = chart_modes(chart);
        partial = partial
            .into_iter()
            .flat_map(|(level, prefix)| {
                modes.iter().filter_map(move |&(l, mode)| {
                    let total = level + l;
                    (total <= MAX_LEVEL).then(|| {
                        let mut v = prefix.clone();
                        v.push(mode);
                        (total, v)
                    })
                })
            })
            .collect();
    }
    partial
        .into_iter()
        .filter(|(level, _)| *level > 0)
        .map(|(_, modes)| modes)
        .collect()
}

/// Random combination of the low-frequency basis with standard normal
/// coefficients, scaled to unit sup norm over the nodes.
pub fn smooth_perturbation(m: &DiscreteManifold, seed: u64) -> Result<ScalarField> {
    let charts = m.charts();
    let widths: Vec<usize> = charts
        .iter()
        .map(|c| match c {
            Chart::Periodic { .. } => 1,
            Chart::Sphere { .. } => 3,
        })
        .collect();
    let basis = product_basis(charts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefs: Vec<f64> = basis.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut values: Vec<f64> = (0..m.node_count())
        .map(|i| {
            let coords = m.node_coords(i);
            basis
                .iter()
                .zip(&coefs)
                .map(|(modes, c)| {
                    let mut offset = 0;
                    let mut v = *c;
                    for (mode, &w) in modes.iter().zip(&widths) {
                        v *= mode.eval(&coords[offset..offset + w]);
                        offset += w;
                    }
                    v
                })
                .sum()
        })
        .collect();
    let sup = values.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if !(sup > 0.0 && sup.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "perturbation field has sup norm {sup:e}"
        )));
    }
    values.iter_mut().for_each(|x| *x /= sup);
    ScalarField::new(values)
}
