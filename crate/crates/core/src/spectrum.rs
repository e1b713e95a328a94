//! Spectrum of `Δ_g̃` for `g̃ = u^{4/(n−2)} g`, the conformal Laplacian
//! identity, the linearized Euler–Lagrange operator and transversality
//! integrals.
//!
//! Eigenproblems use weak forms (`K_u φ = λ M_u φ`); pointwise identities use
//! strong forms (`diag(w)⁻¹ K`).

use serde::{Deserialize, Serialize};

use crate::eigen::{lobpcg, LobpcgOptions};
use crate::error::{Error, Result};
use crate::linalg::{dense_sym_eig, wdot, Cholesky, SymCsr};
use crate::manifold::{assemble_weighted_operators, DiscreteManifold, ScalarField};
use crate::minimizer::euler_lagrange_residual;
use crate::sobolev::constants;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumOptions {
    /// Number of eigenpairs, the constant mode included.
    pub k: usize,
    /// Relative eigen-residual for convergence.
    pub tol: f64,
    pub max_iterations: usize,
    /// Extra block columns carried by the eigensolver.
    pub guard: usize,
    /// Relative width of the λ₁ cluster.
    pub multiplicity_tol: f64,
    pub seed: u64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            k: 8,
            tol: 1e-9,
            max_iterations: 400,
            guard: 4,
            multiplicity_tol: 1e-3,
            seed: 0x5eed,
        }
    }
}

impl SpectrumOptions {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config("k", "at least two eigenpairs are required"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        if !(self.multiplicity_tol >= 0.0) {
            return Err(Error::config("multiplicity_tol", "must be nonnegative"));
        }
        Ok(())
    }

    fn lobpcg(&self) -> LobpcgOptions {
        LobpcgOptions {
            tol: self.tol,
            max_iterations: self.max_iterations,
            guard: self.guard,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// `λ₀ ≤ λ₁ ≤ …`, the constant mode first.
    pub eigenvalues: Vec<f64>,
    /// Mass-orthonormal eigenfields matching `eigenvalues`.
    pub eigenfields: Vec<ScalarField>,
    /// Relative eigen-residuals (zero for the analytic constant mode).
    pub residuals: Vec<f64>,
    /// `Σ w u^{2*}` (the total mass for plain spectra).
    pub vol_gtilde: f64,
    pub lambda1: f64,
    /// `λ₁ · vol^{2/n}`.
    pub normalized_lambda1: f64,
    pub multiplicity: usize,
    pub sphere_bound: Option<f64>,
    /// `normalized_lambda1 − n ω_n^{2/n}` (dimension ≥ 3 only).
    pub gap_to_sphere_bound: Option<f64>,
    pub iterations: usize,
}

impl SpectralReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0f64, |a, &r| a.max(r))
    }

    /// Eigenfields of the λ₁ cluster.
    pub fn lambda1_cluster(&self) -> &[ScalarField] {
        &self.eigenfields[1..1 + self.multiplicity]
    }
}

fn spectrum_of(
    stiffness: &SymCsr,
    mass: &[f64],
    dimension: usize,
    order: &[usize],
    opts: &SpectrumOptions,
) -> Result<SpectralReport> {
    opts.validate()?;
    let vol: f64 = mass.iter().sum();
    let constant = vec![vol.sqrt().recip(); mass.len()];
    let trace_ratio = stiffness.diagonal().iter().sum::<f64>() / vol;
    let shift: Vec<f64> = mass.iter().map(|m| 1e-6 * trace_ratio * m).collect();
    let precond = Cholesky::factor_ordered(&stiffness.plus_diagonal(&shift), order)?;
    let pairs = lobpcg(
        stiffness,
        mass,
        opts.k - 1,
        std::slice::from_ref(&constant),
        &precond,
        &opts.lobpcg(),
    )?;
    let lambda0 = stiffness.quadratic_form(&constant);
    let multiplicity = multiplicity_estimate(&pairs.values, opts.multiplicity_tol)?;
    let lambda1 = pairs.values[0];
    let normalized = lambda1 * vol.powf(2.0 / dimension as f64);
    let sphere_bound = constants(dimension).ok().map(|c| c.sphere_bound);

    let mut eigenvalues = vec![lambda0];
    eigenvalues.extend_from_slice(&pairs.values);
    let mut residuals = vec![0.0];
    residuals.extend_from_slice(&pairs.residuals);
    let mut eigenfields = vec![ScalarField::new(constant)?];
    for v in pairs.vectors {
        eigenfields.push(ScalarField::new(v)?);
    }
    Ok(SpectralReport {
        eigenvalues,
        eigenfields,
        residuals,
        vol_gtilde: vol,
        lambda1,
        normalized_lambda1: normalized,
        multiplicity,
        sphere_bound,
        gap_to_sphere_bound: sphere_bound.map(|sb| normalized - sb),
        iterations: pairs.iterations,
    })
}

/// Lowest `k` eigenpairs of `K_u φ = λ M_u φ` (constant mode deflated and
/// reported as `λ₀`).
pub fn conformal_spectrum(
    m: &DiscreteManifold,
    u: &ScalarField,
    opts: &SpectrumOptions,
) -> Result<SpectralReport> {
    let ops = assemble_weighted_operators(m, u)?;
    spectrum_of(&ops.stiffness, &ops.mass, m.dimension(), m.elimination_order(), opts)
}

/// Lowest `k` eigenpairs of `K φ = λ diag(w) φ`; works in every dimension.
pub fn laplacian_spectrum(m: &DiscreteManifold, opts: &SpectrumOptions) -> Result<SpectralReport> {
    spectrum_of(m.stiffness(), m.weights(), m.dimension(), m.elimination_order(), opts)
}

/// Size of the cluster `{λᵢ ≤ λ₁ (1 + rel_tol)}` of a sorted list of nonzero
/// eigenvalues.
pub fn multiplicity_estimate(eigenvalues: &[f64], rel_tol: f64) -> Result<usize> {
    let Some(&first) = eigenvalues.first() else {
        return Err(Error::DegenerateInput("empty eigenvalue list".into()));
    };
    let cut = first + rel_tol * first.abs();
    Ok(eigenvalues.iter().take_while(|&&l| l <= cut).count())
}

/// `‖u^{2*−1} Δ_g̃ v − Δ_g(u v) + v Δ_g u‖_{L²(w)}` with strong-form
/// Laplacians `M_u⁻¹ K_u` and `diag(w)⁻¹ K`. In the continuum the
/// expression vanishes identically.
pub fn conformal_identity_residual(
    m: &DiscreteManifold,
    u: &ScalarField,
    v: &ScalarField,
) -> Result<f64> {
    let defect = identity_defect(m, u, v)?;
    Ok(wdot(m.weights(), &defect, &defect).sqrt())
}

/// Pointwise defect of the conformal Laplacian identity.
pub fn identity_defect(m: &DiscreteManifold, u: &ScalarField, v: &ScalarField) -> Result<Vec<f64>> {
    m.check_field(u)?;
    m.check_field(v)?;
    u.check_positive()?;
    let uv = u.values();
    let ku_stiff = m.reweighted_stiffness(|i, j| {
        let a = 0.5 * (uv[i] + uv[j]);
        a * a
    });
    let kuv = ku_stiff.matvec(v.values());
    let prod: Vec<f64> = uv.iter().zip(v.values()).map(|(a, b)| a * b).collect();
    let k_prod = m.stiffness().matvec(&prod);
    let k_u = m.stiffness().matvec(uv);
    Ok((0..m.node_count())
        .map(|i| (kuv[i] / uv[i] - k_prod[i] + v.values()[i] * k_u[i]) / m.weights()[i])
        .collect())
}

/// One eigenpair checked against the linearization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceEntry {
    pub lambda: f64,
    /// `λ − n ω_n^{2/n}`.
    pub offset: f64,
    /// `‖u^{2*−1} φ‖_{L²(w)}`.
    pub weight: f64,
    /// `‖A(u φ)‖_{L²(w)}`.
    pub image_norm: f64,
    /// `‖A(u φ) − (λ − n ω_n^{2/n}) u^{2*−1} φ‖_{L²(w)}`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationReport {
    /// Smallest `|eigenvalues|` of the W-self-adjoint operator `A`, ascending.
    pub singular_values: Vec<f64>,
    /// Signed eigenvalues of `A` found by the solver, ascending.
    pub eigenvalues: Vec<f64>,
    /// Singular values below `kernel_tol · ‖A‖`.
    pub kernel_dimension: usize,
    /// Gershgorin bound on `‖A‖`.
    pub operator_norm_bound: f64,
    /// Rayleigh–Ritz estimate of the smallest singular value of `[A | u]`
    /// over the computed modes.
    pub augmented_min_singular_value: f64,
    /// `σ_min(A)`, a lower bound for the smallest singular value of `[A | u]`.
    pub augmented_lower_bound: f64,
    pub augmented_full_rank: bool,
    pub correspondence: Vec<CorrespondenceEntry>,
    /// Least-squares fit `image_norm ≈ intercept + slope · |offset| · weight`.
    pub correspondence_slope: f64,
    pub correspondence_intercept: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearizationOptions {
    pub singular_values: usize,
    /// Largest EL residual accepted as a solution.
    pub el_tol: f64,
    pub kernel_tol: f64,
    pub rank_tol: f64,
    pub eigen: SpectrumOptions,
}

impl Default for LinearizationOptions {
    fn default() -> Self {
        Self {
            singular_values: 6,
            el_tol: 1e-6,
            kernel_tol: 1e-8,
            rank_tol: 1e-8,
            eigen: SpectrumOptions::default(),
        }
    }
}

/// `A θ = Δ_g θ + (h + β) θ − (2*−1) K_n⁻² u^{2*−2} θ`, the derivative of
/// the Euler–Lagrange map in the field direction, analyzed at `(u, β)`.
pub fn linearized_operator_report(
    m: &DiscreteManifold,
    h: &ScalarField,
    beta: f64,
    u: &ScalarField,
    spectrum: &SpectralReport,
    opts: &LinearizationOptions,
) -> Result<LinearizationReport> {
    let el = euler_lagrange_residual(m, h, beta, u)?;
    if !(el <= opts.el_tol) {
        return Err(Error::StaleState(format!(
            "(u, beta) is not a solution: residual {el:.3e} exceeds {:.3e}",
            opts.el_tol
        )));
    }
    let c = constants(m.dimension())?;
    let p = c.two_star;
    let w = m.weights();
    let uv = u.values();
    let s: Vec<f64> = h
        .values()
        .iter()
        .zip(uv)
        .map(|(h, x)| h + beta - (p - 1.0) * c.k_n_inv_sq * x.powf(p - 2.0))
        .collect();
    let apply = |theta: &[f64]| -> Vec<f64> {
        let k = m.stiffness().matvec(theta);
        (0..theta.len()).map(|i| k[i] / w[i] + s[i] * theta[i]).collect()
    };

    // A is W-self-adjoint, so its singular values are |eigenvalues| of the
    // pencil (K + W diag(s), W). Shift to a definite pencil for the solver.
    let diag = m.stiffness().diagonal();
    let norm_bound = (0..w.len())
        .map(|i| 2.0 * diag[i] / w[i] + s[i].abs())
        .fold(0.0f64, f64::max);
    let s_min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = (1.0 - s_min).max(1.0);
    let shifted: Vec<f64> = w.iter().zip(&s).map(|(w, s)| w * (s + shift)).collect();
    let pencil = m.stiffness().plus_diagonal(&shifted);
    let precond = Cholesky::factor_ordered(&pencil, m.elimination_order())?;
    let wanted = (opts.singular_values + 2).min(m.node_count());
    let pairs = lobpcg(&pencil, w, wanted, &[], &precond, &opts.eigen.lobpcg())?;
    let eigenvalues: Vec<f64> = pairs.values.iter().map(|t| t - shift).collect();
    let mut singular: Vec<f64> = eigenvalues.iter().map(|a| a.abs()).collect();
    singular.sort_by(f64::total_cmp);
    singular.truncate(opts.singular_values.min(singular.len()));
    let kernel_dimension = singular
        .iter()
        .filter(|&&v| v <= opts.kernel_tol * norm_bound)
        .count();

    let q = eigenvalues.len();
    let coeffs: Vec<f64> = pairs.vectors.iter().map(|phi| wdot(w, phi, uv)).collect();
    let mut g = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            g[i * q + j] = coeffs[i] * coeffs[j];
        }
        g[i * q + i] += eigenvalues[i] * eigenvalues[i];
    }
    let (gvals, _) = dense_sym_eig(&g, q)?;
    let augmented = gvals[0].max(0.0).sqrt();
    let lower = singular[0];
    let augmented_full_rank =
        lower > opts.rank_tol || (kernel_dimension <= 1 && augmented > opts.rank_tol);

    let correspondence: Vec<CorrespondenceEntry> = spectrum
        .eigenvalues
        .iter()
        .zip(&spectrum.eigenfields)
        .map(|(&lambda, phi)| {
            let theta: Vec<f64> = uv.iter().zip(phi.values()).map(|(a, b)| a * b).collect();
            let image = apply(&theta);
            let offset = lambda - c.sphere_bound;
            let target: Vec<f64> = uv
                .iter()
                .zip(phi.values())
                .map(|(x, f)| x.powf(p - 1.0) * f)
                .collect();
            let diff: Vec<f64> = image.iter().zip(&target).map(|(a, t)| a - offset * t).collect();
            CorrespondenceEntry {
                lambda,
                offset,
                weight: wdot(w, &target, &target).sqrt(),
                image_norm: wdot(w, &image, &image).sqrt(),
                residual: wdot(w, &diff, &diff).sqrt(),
            }
        })
        .collect();
    let xs: Vec<f64> = correspondence.iter().map(|e| e.offset.abs() * e.weight).collect();
    let ys: Vec<f64> = correspondence.iter().map(|e| e.image_norm).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);

    Ok(LinearizationReport {
        singular_values: singular,
        eigenvalues,
        kernel_dimension,
        operator_norm_bound: norm_bound,
        augmented_min_singular_value: augmented,
        augmented_lower_bound: lower,
        augmented_full_rank,
        correspondence,
        correspondence_slope: slope,
        correspondence_intercept: intercept,
    })
}

/// Ordinary least squares `y ≈ a + b x`; returns `(b, a)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let b = sxy / sxx;
    (b, my - b * mx)
}

/// `Σ w u² φ`.
pub fn transversality_integral(m: &DiscreteManifold, u: &ScalarField, phi: &ScalarField) -> Result<f64> {
    m.check_field(u)?;
    m.check_field(phi)?;
    Ok(m.weights()
        .iter()
        .zip(u.values())
        .zip(phi.values())
        .map(|((w, x), f)| w * x * x * f)
        .sum())
}

/// `Σ w u² φ` for every eigenfield of the λ₁ cluster.
pub fn transversality_integrals(
    m: &DiscreteManifold,
    u: &ScalarField,
    report: &SpectralReport,
) -> Result<Vec<f64>> {
    report
        .lambda1_cluster()
        .iter()
        .map(|phi| transversality_integral(m, u, phi))
        .collect()
}
