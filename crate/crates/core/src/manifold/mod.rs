//! Discrete compact Riemannian manifolds.
//!
//! A [`DiscreteManifold`] is a node set with lumped volume weights `w_i` and
//! an edge Laplacian `K = Σ_e c_e (e_i − e_j)(e_i − e_j)ᵀ`. Keeping the
//! operator in edge form lets the conformally weighted stiffness be
//! reassembled by reweighting each edge.
//!
//! Supported families: periodic finite-difference tori (any dimension,
//! circles included), the icosahedral P1 sphere, and tensor products.

mod icosphere;

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nested_dissection, LaplacianPattern, SymCsr};

/// Declarative description of a manifold build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    FlatTorus {
        lengths: Vec<f64>,
        resolution: Vec<usize>,
        #[serde(default)]
        normalize_volume: bool,
    },
    #[serde(rename = "round-sphere-2")]
    RoundSphere2 {
        radius: f64,
        level: usize,
        #[serde(default)]
        normalize_volume: bool,
    },
    Product {
        a: Box<GridSpec>,
        b: Box<GridSpec>,
        #[serde(default)]
        normalize_volume: bool,
    },
}

pub const MIN_RESOLUTION: usize = 4;
pub const MIN_SPHERE_LEVEL: usize = 2;

impl GridSpec {
    pub fn flat_torus(lengths: &[f64], resolution: &[usize]) -> Self {
        GridSpec::FlatTorus {
            lengths: lengths.to_vec(),
            resolution: resolution.to_vec(),
            normalize_volume: false,
        }
    }

    pub fn circle(length: f64, resolution: usize) -> Self {
        Self::flat_torus(&[length], &[resolution])
    }

    pub fn round_sphere2(radius: f64, level: usize) -> Self {
        GridSpec::RoundSphere2 {
            radius,
            level,
            normalize_volume: false,
        }
    }

    pub fn product(a: GridSpec, b: GridSpec) -> Self {
        GridSpec::Product {
            a: Box::new(a),
            b: Box::new(b),
            normalize_volume: false,
        }
    }

    pub fn with_unit_volume(mut self) -> Self {
        match &mut self {
            GridSpec::FlatTorus {
                normalize_volume, ..
            }
            | GridSpec::RoundSphere2 {
                normalize_volume, ..
            }
            | GridSpec::Product {
                normalize_volume, ..
            } => *normalize_volume = true,
        }
        self
    }

    pub fn dimension(&self) -> usize {
        match self {
            GridSpec::FlatTorus { lengths, .. } => lengths.len(),
            GridSpec::RoundSphere2 { .. } => 2,
            GridSpec::Product { a, b, .. } => a.dimension() + b.dimension(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            GridSpec::FlatTorus { .. } => "flat-torus",
            GridSpec::RoundSphere2 { .. } => "round-sphere-2",
            GridSpec::Product { .. } => "product",
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            GridSpec::FlatTorus { resolution, .. } => resolution.iter().product(),
            GridSpec::RoundSphere2 { level, .. } => 10 * 4usize.pow(*level as u32) + 2,
            GridSpec::Product { a, b, .. } => a.node_count() * b.node_count(),
        }
    }

    /// Compact resolution label, e.g. `32x32x32`, `L5`, `64*L4`.
    pub fn resolution_label(&self) -> String {
        match self {
            GridSpec::FlatTorus { resolution, .. } => resolution
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join("x"),
            GridSpec::RoundSphere2 { level, .. } => format!("L{level}"),
            GridSpec::Product { a, b, .. } => {
                format!("{}*{}", a.resolution_label(), b.resolution_label())
            }
        }
    }

    /// Same spec with every resolution doubled (one extra level on spheres).
    pub fn refined(&self) -> Self {
        match self {
            GridSpec::FlatTorus {
                lengths,
                resolution,
                normalize_volume,
            } => GridSpec::FlatTorus {
                lengths: lengths.clone(),
                resolution: resolution.iter().map(|r| 2 * r).collect(),
                normalize_volume: *normalize_volume,
            },
            GridSpec::RoundSphere2 {
                radius,
                level,
                normalize_volume,
            } => GridSpec::RoundSphere2 {
                radius: *radius,
                level: level + 1,
                normalize_volume: *normalize_volume,
            },
            GridSpec::Product {
                a,
                b,
                normalize_volume,
            } => GridSpec::Product {
                a: Box::new(a.refined()),
                b: Box::new(b.refined()),
                normalize_volume: *normalize_volume,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GridSpec::FlatTorus {
                lengths,
                resolution,
                ..
            } => {
                if lengths.is_empty() {
                    return Err(Error::InvalidSpec("torus needs at least one axis".into()));
                }
                if lengths.len() != resolution.len() {
                    return Err(Error::InvalidSpec(format!(
                        "torus has {} lengths but {} resolutions",
                        lengths.len(),
                        resolution.len()
                    )));
                }
                if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
                    return Err(Error::InvalidSpec(format!("torus length {l} must be > 0")));
                }
                if let Some(r) = resolution.iter().find(|&&r| r < MIN_RESOLUTION) {
                    return Err(Error::InvalidSpec(format!(
                        "resolution {r} is below the minimum {MIN_RESOLUTION}"
                    )));
                }
                Ok(())
            }
            GridSpec::RoundSphere2 { radius, level, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidSpec(format!("sphere radius {radius} must be > 0")));
                }
                if *level < MIN_SPHERE_LEVEL {
                    return Err(Error::InvalidSpec(format!(
                        "refinement level {level} is below the minimum {MIN_SPHERE_LEVEL}"
                    )));
                }
                Ok(())
            }
            GridSpec::Product { a, b, .. } => {
                a.validate()?;
                b.validate()
            }
        }
    }

    pub fn build(&self) -> Result<DiscreteManifold> {
        self.validate()?;
        let (manifold, normalize) = match self {
            GridSpec::FlatTorus {
                lengths,
                resolution,
                normalize_volume,
            } => (build_flat_torus(lengths, resolution)?, *normalize_volume),
            GridSpec::RoundSphere2 {
                radius,
                level,
                normalize_volume,
            } => (build_round_sphere2(*radius, *level)?, *normalize_volume),
            GridSpec::Product {
                a,
                b,
                normalize_volume,
            } => {
                let (a, b) = (a.build()?, b.build()?);
                (build_product(&a, &b, a.dimension() + b.dimension())?, *normalize_volume)
            }
        };
        let mut manifold = if normalize {
            manifold.with_unit_volume()
        } else {
            manifold
        };
        manifold.spec = self.clone();
        Ok(manifold)
    }
}

/// Coordinate block of one factor; node coordinates are concatenated blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Chart {
    /// One periodic coordinate in `[0, length)`.
    Periodic { length: f64 },
    /// Three ambient coordinates on the sphere of the given radius.
    Sphere { radius: f64 },
}

impl Chart {
    pub fn width(&self) -> usize {
        match self {
            Chart::Periodic { .. } => 1,
            Chart::Sphere { .. } => 3,
        }
    }
}

/// The discrete `(M, g)`: lumped weights, edge Laplacian and metadata.
#[derive(Debug, Clone)]
pub struct DiscreteManifold {
    spec: GridSpec,
    dimension: usize,
    weights: Vec<f64>,
    edges: Vec<(usize, usize)>,
    edge_weights: Vec<f64>,
    pattern: LaplacianPattern,
    stiffness: SymCsr,
    volume: f64,
    scalar_curvature: f64,
    charts: Vec<Chart>,
    coords: Vec<f64>,
    /// Fill-reducing elimination order for factorizations on this graph.
    elimination_order: OnceLock<Vec<usize>>,
}

impl DiscreteManifold {
    fn from_parts(
        spec: GridSpec,
        dimension: usize,
        weights: Vec<f64>,
        edges: Vec<(usize, usize)>,
        edge_weights: Vec<f64>,
        scalar_curvature: f64,
        charts: Vec<Chart>,
        coords: Vec<f64>,
    ) -> Self {
        let pattern = LaplacianPattern::new(weights.len(), &edges);
        let stiffness = pattern.assemble(edge_weights.iter().copied());
        let volume = weights.iter().sum();
        Self {
            spec,
            dimension,
            weights,
            edges,
            edge_weights,
            pattern,
            stiffness,
            volume,
            scalar_curvature,
            charts,
            coords,
            elimination_order: OnceLock::new(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Lumped volume weights `w_i`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn stiffness(&self) -> &SymCsr {
        &self.stiffness
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    /// Constant scalar curvature of the smooth metric being discretized.
    pub fn scalar_curvature(&self) -> f64 {
        self.scalar_curvature
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn coord_width(&self) -> usize {
        self.charts.iter().map(Chart::width).sum()
    }

    pub fn node_coords(&self, i: usize) -> &[f64] {
        let w = self.coord_width();
        &self.coords[i * w..(i + 1) * w]
    }

    /// Nested-dissection order of the nodes (computed once), suitable for
    /// Cholesky factorizations of any matrix with the stiffness pattern.
    pub fn elimination_order(&self) -> &[usize] {
        self.elimination_order
            .get_or_init(|| nested_dissection(&self.stiffness))
    }

    /// Rescales the metric `g → s²g` with `s = Vol^{-1/n}` so that the total
    /// volume becomes one. Weights scale by `sⁿ`, edge weights by `sⁿ⁻²`,
    /// curvature by `s⁻²`.
    pub fn with_unit_volume(self) -> Self {
        let n = self.dimension as i32;
        let s = self.volume.powf(-1.0 / self.dimension as f64);
        let weights = self.weights.iter().map(|w| w * s.powi(n)).collect();
        let edge_weights = self.edge_weights.iter().map(|c| c * s.powi(n - 2)).collect();
        let charts = self
            .charts
            .iter()
            .map(|c| match *c {
                Chart::Periodic { length } => Chart::Periodic { length: length * s },
                Chart::Sphere { radius } => Chart::Sphere { radius: radius * s },
            })
            .collect();
        let coords = self.coords.iter().map(|x| x * s).collect();
        Self::from_parts(
            self.spec,
            self.dimension,
            weights,
            self.edges,
            edge_weights,
            self.scalar_curvature / (s * s),
            charts,
            coords,
        )
    }

    pub(crate) fn check_field(&self, f: &ScalarField) -> Result<()> {
        if f.len() != self.node_count() {
            return Err(Error::Dimension {
                expected: self.node_count(),
                found: f.len(),
            });
        }
        Ok(())
    }

    /// Edge Laplacian with each edge weight multiplied by `scale(e)`.
    pub(crate) fn reweighted_stiffness(&self, scale: impl Fn(usize, usize) -> f64) -> SymCsr {
        self.pattern.assemble(
            self.edges
                .iter()
                .zip(&self.edge_weights)
                .map(|(&(i, j), c)| c * scale(i, j)),
        )
    }
}

/// Periodic second-order finite differences on `Π [0, L_d)`; nodes are
/// numbered row-major with axis 0 slowest. Dimension 1 gives a circle.
pub fn build_flat_torus(lengths: &[f64], resolution: &[usize]) -> Result<DiscreteManifold> {
    let spec = GridSpec::flat_torus(lengths, resolution);
    spec.validate()?;
    let n = lengths.len();
    let spacing: Vec<f64> = lengths
        .iter()
        .zip(resolution)
        .map(|(l, &r)| l / r as f64)
        .collect();
    let cell: f64 = spacing.iter().product();
    let count: usize = resolution.iter().product();

    let mut strides = vec![1usize; n];
    for d in (0..n.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * resolution[d + 1];
    }

    let mut edges = Vec::with_capacity(n * count);
    let mut edge_weights = Vec::with_capacity(n * count);
    let mut coords = Vec::with_capacity(n * count);
    for node in 0..count {
        for d in 0..n {
            let idx = (node / strides[d]) % resolution[d];
            coords.push(idx as f64 * spacing[d]);
            let next = node - idx * strides[d] + ((idx + 1) % resolution[d]) * strides[d];
            edges.push((node.min(next), node.max(next)));
            edge_weights.push(cell / (spacing[d] * spacing[d]));
        }
    }
    Ok(DiscreteManifold::from_parts(
        spec,
        n,
        vec![cell; count],
        edges,
        edge_weights,
        0.0,
        lengths.iter().map(|&length| Chart::Periodic { length }).collect(),
        coords,
    ))
}

/// Icosahedral P1 sphere of the given radius with cotangent stiffness and
/// barycentric lumped mass.
pub fn build_round_sphere2(radius: f64, level: usize) -> Result<DiscreteManifold> {
    let spec = GridSpec::round_sphere2(radius, level);
    spec.validate()?;
    let mesh = icosphere::unit_icosphere(level);
    let (edges, cot, lumped) = icosphere::cotangent_operator(&mesh);
    let weights = lumped.iter().map(|a| a * radius * radius).collect();
    let coords = mesh
        .vertices
        .iter()
        .flat_map(|v| v.map(|x| x * radius))
        .collect();
    Ok(DiscreteManifold::from_parts(
        spec,
        2,
        weights,
        edges,
        cot,
        2.0 / (radius * radius),
        vec![Chart::Sphere { radius }],
        coords,
    ))
}

/// Riemannian product. Node `(i, k)` is numbered `i·N_b + k`; stiffness is
/// `K_a ⊗ diag(w_b) + diag(w_a) ⊗ K_b`.
pub fn build_product(
    a: &DiscreteManifold,
    b: &DiscreteManifold,
    dimension: usize,
) -> Result<DiscreteManifold> {
    if a.dimension() + b.dimension() != dimension {
        return Err(Error::InvalidSpec(format!(
            "product of dimensions {} and {} cannot have dimension {dimension}",
            a.dimension(),
            b.dimension()
        )));
    }
    let (na, nb) = (a.node_count(), b.node_count());
    let mut edges = Vec::with_capacity(a.edges.len() * nb + na * b.edges.len());
    let mut edge_weights = Vec::with_capacity(edges.capacity());
    for (&(i, j), c) in a.edges.iter().zip(&a.edge_weights) {
        for (k, wb) in b.weights.iter().enumerate() {
            edges.push((i * nb + k, j * nb + k));
            edge_weights.push(c * wb);
        }
    }
    for (i, wa) in a.weights.iter().enumerate() {
        for (&(k, l), c) in b.edges.iter().zip(&b.edge_weights) {
            edges.push((i * nb + k, i * nb + l));
            edge_weights.push(wa * c);
        }
    }
    let weights = a
        .weights
        .iter()
        .flat_map(|wa| b.weights.iter().map(move |wb| wa * wb))
        .collect();
    let mut coords = Vec::with_capacity(na * nb * (a.coord_width() + b.coord_width()));
    for i in 0..na {
        for k in 0..nb {
            coords.extend_from_slice(a.node_coords(i));
            coords.extend_from_slice(b.node_coords(k));
        }
    }
    let charts = a.charts.iter().chain(&b.charts).copied().collect();
    Ok(DiscreteManifold::from_parts(
        GridSpec::product(a.spec.clone(), b.spec.clone()),
        dimension,
        weights,
        edges,
        edge_weights,
        a.scalar_curvature + b.scalar_curvature,
        charts,
        coords,
    ))
}

/// Node-sampled real function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalarField(Vec<f64>);

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::DegenerateInput(format!("field value {v} at node {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn constant(manifold: &DiscreteManifold, c: f64) -> Self {
        Self(vec![c; manifold.node_count()])
    }

    /// Samples `f` at node coordinates (see [`Chart`] for the layout).
    pub fn from_fn(manifold: &DiscreteManifold, f: impl Fn(&[f64]) -> f64) -> Self {
        Self(
            (0..manifold.node_count())
                .map(|i| f(manifold.node_coords(i)))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub(crate) fn check_positive(&self) -> Result<()> {
        match self.0.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            Some((index, &value)) => Err(Error::Positivity { index, value }),
            None => Ok(()),
        }
    }
}

/// `Σ w_i f_i`
pub fn integrate(manifold: &DiscreteManifold, f: &ScalarField) -> Result<f64> {
    manifold.check_field(f)?;
    Ok(manifold.weights.iter().zip(f.values()).map(|(w, x)| w * x).sum())
}

/// `fᵀ K f`, the discrete `∫|∇f|² dv_g`.
pub fn dirichlet_energy(manifold: &DiscreteManifold, f: &ScalarField) -> Result<f64> {
    manifold.check_field(f)?;
    Ok(manifold.stiffness.quadratic_form(f.values()))
}

/// Conformally weighted operators of `g̃ = u^{4/(n−2)} g`.
#[derive(Debug, Clone)]
pub struct WeightedOperators {
    /// `K_u`: each edge weight multiplied by `((u_i + u_j)/2)²`.
    pub stiffness: SymCsr,
    /// Diagonal of `M_u = diag(w_i u_i^{2*})`.
    pub mass: Vec<f64>,
}

/// Critical exponent `2n/(n−2)`.
pub fn critical_exponent(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    Ok(2.0 * n as f64 / (n as f64 - 2.0))
}

pub fn assemble_weighted_operators(
    manifold: &DiscreteManifold,
    u: &ScalarField,
) -> Result<WeightedOperators> {
    manifold.check_field(u)?;
    u.check_positive()?;
    let p = critical_exponent(manifold.dimension())?;
    let uv = u.values();
    let stiffness = manifold.reweighted_stiffness(|i, j| {
        let m = 0.5 * (uv[i] + uv[j]);
        m * m
    });
    let mass = manifold
        .weights
        .iter()
        .zip(uv)
        .map(|(w, x)| w * x.powf(p))
        .collect();
    Ok(WeightedOperators { stiffness, mass })
}

/// Volume of the round unit n-sphere, `2π^{(n+1)/2} / Γ((n+1)/2)`.
pub fn sphere_volume(n: usize) -> f64 {
    2.0 * PI.powf((n as f64 + 1.0) / 2.0) / gamma_half_integer(n + 1)
}

/// `Γ(m/2)` for a positive integer `m`.
pub(crate) fn gamma_half_integer(m: usize) -> f64 {
    assert!(m > 0);
    let (mut x, mut acc) = if m % 2 == 0 { (1.0, 1.0) } else { (0.5, PI.sqrt()) };
    while x < m as f64 / 2.0 - 0.25 {
        acc *= x;
        x += 1.0;
    }
    acc
}
