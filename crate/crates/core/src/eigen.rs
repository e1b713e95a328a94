//! Block generalized symmetric eigensolver (LOBPCG) for `A x = λ B x` with a
//! diagonal positive `B`, optional explicit deflation, and a sparse
//! Cholesky preconditioner.
//!
//! Bases are B-orthonormalized by the SVQB procedure (eigen-decomposition of
//! the scaled Gram matrix, dropping directions below a relative threshold),
//! which tolerates the near-linear dependence that appears as vectors
//! converge. Converged columns stay in the Rayleigh–Ritz basis but stop
//! contributing search directions (soft locking).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dense_sym_eig, dot, wdot, Cholesky, SymCsr};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobpcgOptions {
    /// Relative residual `‖A x − θ B x‖_{B⁻¹} / |θ|` at which a pair counts
    /// as converged.
    pub tol: f64,
    pub max_iterations: usize,
    /// Extra block columns iterated alongside the wanted ones.
    pub guard: usize,
    pub seed: u64,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iterations: 400,
            guard: 3,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// B-orthonormal eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    /// Relative residuals in the convergence norm.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

const DROP_TOL: f64 = 1e-13;
/// Iterations without a tenfold reduction of the worst wanted residual after
/// which the solve is declared stagnant (round-off floor above `tol`).
const STAGNATION_WINDOW: usize = 60;

fn project_out(b: &[f64], deflate: &[Vec<f64>], v: &mut [f64]) {
    for y in deflate {
        let c = wdot(b, y, v);
        v.iter_mut().zip(y).for_each(|(x, y)| *x -= c * y);
    }
}

/// B-orthonormal basis of `span(vecs) ⊖ span(deflate)` by two SVQB passes.
fn b_orthonormalize(b: &[f64], mut vecs: Vec<Vec<f64>>, deflate: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    for _ in 0..2 {
        for v in vecs.iter_mut() {
            project_out(b, deflate, v);
        }
        vecs.retain(|v| wdot(b, v, v) > 0.0);
        let k = vecs.len();
        if k == 0 {
            return Ok(vecs);
        }
        let mut gram = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let g = wdot(b, &vecs[i], &vecs[j]);
                gram[i * k + j] = g;
                gram[j * k + i] = g;
            }
        }
        let d: Vec<f64> = (0..k).map(|i| gram[i * k + i].sqrt().recip()).collect();
        for i in 0..k {
            for j in 0..k {
                gram[i * k + j] *= d[i] * d[j];
            }
        }
        let (vals, evecs) = dense_sym_eig(&gram, k)?;
        let top = vals.last().copied().unwrap_or(0.0);
        let n = vecs[0].len();
        let mut out = Vec::new();
        for (c, &lam) in vals.iter().enumerate() {
            if lam <= DROP_TOL * top {
                continue;
            }
            let mut v = vec![0.0; n];
            for (i, vi) in vecs.iter().enumerate() {
                let coef = evecs[c * k + i] * d[i] / lam.sqrt();
                v.iter_mut().zip(vi).for_each(|(x, y)| *x += coef * y);
            }
            out.push(v);
        }
        vecs = out;
    }
    Ok(vecs)
}

fn combine(basis: &[Vec<f64>], coefs: &[f64], col: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; basis[0].len()];
    for (i, bi) in basis.iter().enumerate() {
        let c = coefs[col * k + i];
        v.iter_mut().zip(bi).for_each(|(x, y)| *x += c * y);
    }
    v
}

/// Smallest `nev` eigenpairs of `(A, diag(b))` restricted to the
/// B-orthogonal complement of `deflate` (which must be B-orthonormal).
pub fn lobpcg(
    a: &SymCsr,
    b: &[f64],
    nev: usize,
    deflate: &[Vec<f64>],
    precond: &Cholesky,
    opts: &LobpcgOptions,
) -> Result<EigenPairs> {
    let n = a.n();
    if nev == 0 {
        return Err(Error::DegenerateInput("no eigenpairs requested".into()));
    }
    let available = n.saturating_sub(deflate.len());
    if nev > available {
        return Err(Error::DegenerateInput(format!(
            "{nev} eigenpairs requested but only {available} exist"
        )));
    }
    let m = (nev + opts.guard).min(available);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let mut v: Vec<f64> = b
                .iter()
                .map(|bi| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    bi * z
                })
                .collect();
            precond.solve_in_place(&mut v);
            v
        })
        .collect();
    let mut x = b_orthonormalize(b, init, deflate)?;
    if x.len() < m {
        return Err(Error::NumericalFailure("initial block is rank deficient".into()));
    }
    let (mut theta, mut x_vecs, mut ax) = rayleigh_ritz(a, &x, m)?;
    x = x_vecs.drain(..).collect();
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut rel = vec![f64::INFINITY; m];
    let mut best_worst = f64::INFINITY;
    let mut best_iter = 0;

    for iter in 0..opts.max_iterations {
        let mut residuals = Vec::with_capacity(m);
        for j in 0..m {
            let r: Vec<f64> = ax[j]
                .iter()
                .zip(&x[j])
                .zip(b)
                .map(|((ax, x), b)| ax - theta[j] * b * x)
                .collect();
            let norm = r.iter().zip(b).map(|(r, b)| r * r / b).sum::<f64>().sqrt();
            rel[j] = norm / theta[j].abs().max(f64::MIN_POSITIVE);
            residuals.push(r);
        }
        if rel[..nev].iter().all(|&r| r <= opts.tol) {
            return Ok(EigenPairs {
                values: theta[..nev].to_vec(),
                vectors: x[..nev].to_vec(),
                residuals: rel[..nev].to_vec(),
                iterations: iter,
            });
        }
        let worst = rel[..nev].iter().fold(0.0f64, |a, &b| a.max(b));
        if worst < 0.1 * best_worst {
            best_worst = worst;
            best_iter = iter;
        } else if iter - best_iter >= STAGNATION_WINDOW {
            return Err(Error::NumericalFailure(format!(
                "eigensolver stagnated at iteration {iter}: worst relative residual {worst:e} \
                 (tolerance {:e}); Ritz values {:?}",
                opts.tol,
                &theta[..nev]
            )));
        }
        let w: Vec<Vec<f64>> = residuals
            .into_iter()
            .enumerate()
            .filter(|(j, _)| rel[*j] > opts.tol)
            .map(|(_, mut r)| {
                precond.solve_in_place(&mut r);
                r
            })
            .collect();
        let mut basis = x.clone();
        basis.extend(w);
        basis.extend(p.iter().cloned());
        let basis = b_orthonormalize(b, basis, deflate)?;
        if basis.len() < m {
            return Err(Error::NumericalFailure(format!(
                "search space collapsed to {} vectors at iteration {iter}",
                basis.len()
            )));
        }
        let (new_theta, new_x, new_ax) = rayleigh_ritz(a, &basis, m)?;
        p = new_x
            .iter()
            .map(|xn| {
                let mut d = xn.clone();
                for xo in &x {
                    let c = wdot(b, xo, xn);
                    d.iter_mut().zip(xo).for_each(|(v, y)| *v -= c * y);
                }
                d
            })
            .filter(|d| wdot(b, d, d) > 1e-28)
            .collect();
        theta = new_theta;
        x = new_x;
        ax = new_ax;
    }
    Err(Error::NumericalFailure(format!(
        "eigensolver did not converge in {} iterations; relative residuals {:?}; Ritz values {:?}",
        opts.max_iterations,
        &rel[..nev],
        &theta[..nev]
    )))
}

/// Rayleigh–Ritz on a B-orthonormal basis; returns the lowest `m` Ritz
/// values, Ritz vectors and their images under `A`.
#[allow(clippy::type_complexity)]
fn rayleigh_ritz(a: &SymCsr, basis: &[Vec<f64>], m: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let k = basis.len();
    let a_basis: Vec<Vec<f64>> = basis.iter().map(|v| a.matvec(v)).collect();
    let mut h = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = dot(&basis[i], &a_basis[j]);
            h[i * k + j] = v;
            h[j * k + i] = v;
        }
    }
    let (vals, vecs) = dense_sym_eig(&h, k)?;
    let x = (0..m).map(|c| combine(basis, &vecs, c, k)).collect();
    let ax = (0..m).map(|c| combine(&a_basis, &vecs, c, k)).collect();
    Ok((vals[..m].to_vec(), x, ax))
}
