//! Sparse symmetric storage, direct solvers and small dense helpers.
//!
//! Everything here runs sequentially so that every reduction happens in a
//! fixed order; reports built on top of it are bit-reproducible.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::solvers::Solve;
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, MatMut, Par, Side};

use crate::error::{Error, Result};

/// Symmetric matrix in CSR layout storing both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SymCsr {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl SymCsr {
    /// Builds a matrix from `(row, col, value)` entries, summing duplicates.
    /// The caller supplies both triangles.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in entries {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut scratch = vec![(0usize, 0.0f64); entries.len()];
        for &(i, j, v) in entries {
            scratch[fill[i]] = (j, v);
            fill[i] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::with_capacity(entries.len());
        let mut val = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        for i in 0..n {
            let row = &mut scratch[counts[i]..counts[i + 1]];
            // stable sort keeps duplicate summation order deterministic
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == j {
                    acc += row[k].1;
                    k += 1;
                }
                col.push(j);
                val.push(acc);
            }
            row_ptr.push(col.len());
        }
        Self {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.val
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[range.clone()]
            .iter()
            .copied()
            .zip(self.val[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col[range.clone()].binary_search(&j) {
            Ok(k) => self.val[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.val[k] * y[self.col[k]];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// Returns `self + diag(d)`; the diagonal must be present in the pattern.
    pub fn plus_diagonal(&self, d: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            let range = self.row_ptr[i]..self.row_ptr[i + 1];
            let k = self.col[range.clone()]
                .binary_search(&i)
                .expect("diagonal entry missing from pattern");
            out.val[range.start + k] += d[i];
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.val.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Largest |A_ij - A_ji| over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    fn to_faer(&self, lower_only: bool) -> Result<SparseColMat<usize, f64>> {
        let mut trips = Vec::with_capacity(self.nnz());
        // CSR of a symmetric matrix read as CSC is the same matrix
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if !lower_only || j <= i {
                    trips.push(Triplet::new(i, j, v));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| Error::NumericalFailure(format!("sparse assembly: {e:?}")))
    }
}

/// Pattern of an edge Laplacian `Σ_e c_e (e_i − e_j)(e_i − e_j)ᵀ` with the
/// slot of every edge entry recorded, so reweighted copies are cheap.
#[derive(Debug, Clone)]
pub struct LaplacianPattern {
    template: SymCsr,
    slots: Vec<[usize; 4]>,
}

impl LaplacianPattern {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut trips = Vec::with_capacity(n + 2 * edges.len());
        for i in 0..n {
            trips.push((i, i, 0.0));
        }
        for &(i, j) in edges {
            trips.push((i, j, 0.0));
            trips.push((j, i, 0.0));
        }
        let template = SymCsr::from_triplets(n, &trips);
        let slot = |i: usize, j: usize| {
            let range = template.row_ptr[i]..template.row_ptr[i + 1];
            range.start
                + template.col[range]
                    .binary_search(&j)
                    .expect("edge present in pattern")
        };
        let slots = edges
            .iter()
            .map(|&(i, j)| [slot(i, i), slot(j, j), slot(i, j), slot(j, i)])
            .collect();
        Self { template, slots }
    }

    /// Assembles the Laplacian with the given per-edge weights.
    pub fn assemble(&self, weights: impl Iterator<Item = f64>) -> SymCsr {
        let mut out = self.template.clone();
        for (s, c) in self.slots.iter().zip(weights) {
            out.val[s[0]] += c;
            out.val[s[1]] += c;
            out.val[s[2]] -= c;
            out.val[s[3]] -= c;
        }
        out
    }
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix,
/// using a nested-dissection ordering of the matrix graph.
pub struct Cholesky {
    n: usize,
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
}

impl Cholesky {
    /// Factors `a` with a graph-only nested-dissection order.
    pub fn factor(a: &SymCsr) -> Result<Self> {
        Self::factor_ordered(a, &nested_dissection(a))
    }

    /// Factors `a` eliminating unknowns in the given order (a permutation
    /// of `0..n`).
    pub fn factor_ordered(a: &SymCsr, order: &[usize]) -> Result<Self> {
        let n = a.n();
        if order.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: order.len(),
            });
        }
        let mat = a.to_faer(true)?;
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(Error::DegenerateInput("elimination order is not a permutation".into()));
            }
            inv[old] = new;
        }
        let perm = PermRef::new_checked(order, &inv, n);
        let symbolic = factorize_symbolic_cholesky(
            mat.symbolic(),
            Side::Lower,
            SymmetricOrdering::Custom(perm),
            Default::default(),
        )
        .map_err(|e| Error::NumericalFailure(format!("cholesky symbolic: {e:?}")))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let mut mem = MemBuffer::try_new(symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()))
            .map_err(|e| Error::NumericalFailure(format!("cholesky workspace: {e:?}")))?;
        symbolic
            .factorize_numeric_llt(
                &mut values,
                mat.as_ref(),
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .map_err(|e| Error::NumericalFailure(format!("cholesky: {e:?}")))?;
        Ok(Self { n, symbolic, values })
    }

    /// Number of stored entries of the factor.
    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        debug_assert_eq!(rhs.len(), self.n);
        let n = self.n;
        let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        LltRef::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            mat,
            Par::Seq,
            MemStack::new(&mut mem),
        );
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Below this size a region is ordered as is.
const DISSECTION_LEAF: usize = 64;

/// Nested-dissection elimination order for the graph of `a`: each
/// connected region is split at the median breadth-first level from a
/// pseudo-peripheral node, the two halves are ordered first and the
/// separating level last. On 3-D meshes (periodic ones included) this
/// keeps Cholesky fill several times below minimum-degree orderings.
pub fn nested_dissection(a: &SymCsr) -> Vec<usize> {
    let n = a.n();
    let mut ws = Dissection {
        a,
        region: vec![0; n],
        seen: vec![0; n],
        level: vec![0; n],
        stamp: 0,
        out: Vec::with_capacity(n),
    };
    ws.dissect((0..n).collect());
    ws.out
}

struct Dissection<'a> {
    a: &'a SymCsr,
    region: Vec<usize>,
    seen: Vec<usize>,
    level: Vec<usize>,
    stamp: usize,
    out: Vec<usize>,
}

impl Dissection<'_> {
    fn next_stamp(&mut self) -> usize {
        self.stamp += 1;
        self.stamp
    }

    /// Breadth-first search inside region `id`; returns visited nodes in
    /// visiting order with their levels stored in `self.level`.
    fn bfs(&mut self, id: usize, start: usize) -> Vec<usize> {
        let visit = self.next_stamp();
        let mut order = vec![start];
        self.seen[start] = visit;
        self.level[start] = 0;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for (j, _) in self.a.row(v) {
                if self.region[j] == id && self.seen[j] != visit {
                    self.seen[j] = visit;
                    self.level[j] = self.level[v] + 1;
                    order.push(j);
                }
            }
        }
        order
    }

    fn dissect(&mut self, nodes: Vec<usize>) {
        if nodes.len() <= DISSECTION_LEAF {
            self.out.extend(nodes);
            return;
        }
        let id = self.next_stamp();
        for &v in &nodes {
            self.region[v] = id;
        }
        let first = self.bfs(id, nodes[0]);
        let far = *first.last().expect("nonempty");
        let order = self.bfs(id, far);
        if order.len() < nodes.len() {
            let visit = self.stamp;
            let rest: Vec<usize> = nodes.into_iter().filter(|&v| self.seen[v] != visit).collect();
            self.dissect(order);
            self.dissect(rest);
            return;
        }
        let half = order.len() / 2;
        let cut = self.level[order[half]];
        let (mut low, mut sep, mut high) = (Vec::new(), Vec::new(), Vec::new());
        for &v in &order {
            match self.level[v].cmp(&cut) {
                std::cmp::Ordering::Less => low.push(v),
                std::cmp::Ordering::Equal => sep.push(v),
                std::cmp::Ordering::Greater => high.push(v),
            }
        }
        if low.is_empty() || high.is_empty() {
            self.out.extend(order);
            return;
        }
        self.dissect(low);
        self.dissect(high);
        self.out.extend(sep);
    }
}

/// Sparse LU factorization, used for symmetric indefinite systems.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(a: &SymCsr) -> Result<Self> {
        let mat = a.to_faer(false)?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::NumericalFailure(format!("lu: {e:?}")))?;
        Ok(Self { n: a.n(), lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        let n = self.n;
        let mat = MatMut::from_column_major_slice_mut(&mut x, n, 1);
        self.lu.solve_in_place(mat);
        x
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct IterativeSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final residual in the preconditioner norm, relative to the right-hand side.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned MINRES for a symmetric (possibly indefinite) `A` with a
/// symmetric positive definite preconditioner.
pub fn minres(a: &SymCsr, b: &[f64], precond: &Cholesky, tol: f64, max_iterations: usize) -> IterativeSolution {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y = precond.solve(&r1);
    let beta1 = dot(&r1, &y).max(0.0).sqrt();
    if beta1 == 0.0 {
        return IterativeSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    for it in 1..=max_iterations {
        let s = 1.0 / beta;
        v.iter_mut().zip(&y).for_each(|(v, y)| *v = s * y);
        y = a.matvec(&v);
        if it >= 2 {
            let f = beta / oldb;
            y.iter_mut().zip(&r1).for_each(|(y, r)| *y -= f * r);
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        y.iter_mut().zip(&r2).for_each(|(y, r)| *y -= f * r);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        y = precond.solve(&r2);
        oldb = beta;
        beta = dot(&r2, &y);
        if !(beta >= 0.0) {
            break;
        }
        beta = beta.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }
        if phibar <= tol * beta1 || beta == 0.0 {
            return IterativeSolution {
                x,
                iterations: it,
                relative_residual: phibar / beta1,
                converged: true,
            };
        }
    }
    IterativeSolution {
        x,
        iterations: max_iterations,
        relative_residual: phibar / beta1,
        converged: false,
    }
}

/// Eigendecomposition of a small dense symmetric matrix given row-major.
/// Returns eigenvalues ascending and eigenvectors as columns (column-major).
pub fn dense_sym_eig(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    debug_assert_eq!(a.len(), n * n);
    let mat = Mat::from_fn(n, n, |i, j| 0.5 * (a[i * n + j] + a[j * n + i]));
    let evd = mat
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NumericalFailure(format!("dense eigensolver: {e:?}")))?;
    let vals: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
    let u = evd.U();
    let mut vecs = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            vecs[j * n + i] = u[(i, j)];
        }
    }
    Ok((vals, vecs))
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `Σ w_i x_i y_i`
pub fn wdot(w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    w.iter().zip(x).zip(y).map(|((w, a), b)| w * a * b).sum()
}

pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> SymCsr {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        LaplacianPattern::new(n, &edges).assemble(std::iter::repeat(1.0))
    }

    #[test]
    fn minres_matches_lu_on_indefinite_system() {
        let n = 50;
        let k = path_laplacian(n);
        let a = k.plus_diagonal(&vec![-0.3; n]);
        let pre = Cholesky::factor(&k.plus_diagonal(&vec![1.0; n])).unwrap();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let sol = minres(&a, &b, &pre, 1e-13, 500);
        assert!(sol.converged);
        let exact = SparseLu::factor(&a).unwrap().solve(&b);
        let scale = exact.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, e) in sol.x.iter().zip(&exact) {
            assert!((x - e).abs() < 1e-9 * scale, "{x} vs {e}");
        }
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = SymCsr::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0), (0, 1, 4.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(0, 1), 4.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn laplacian_kills_constants() {
        let k = path_laplacian(6);
        let y = k.matvec(&[1.0; 6]);
        assert!(y.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(k.asymmetry(), 0.0);
    }

    #[test]
    fn cholesky_and_lu_agree() {
        let n = 8;
        let a = path_laplacian(n).plus_diagonal(&vec![0.5; n]);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x1 = Cholesky::factor(&a).unwrap().solve(&b);
        let x2 = SparseLu::factor(&a).unwrap().solve(&b);
        let r = a.matvec(&x1);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-12);
            assert!((x1[i] - x2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_eig_of_diagonal() {
        let (vals, vecs) = dense_sym_eig(&[3.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        assert!((vecs[1].abs() - 1.0).abs() < 1e-14);
    }

    /// Periodic `k × k` grid Laplacian plus two disconnected path pieces.
    fn grid_with_islands(k: usize) -> SymCsr {
        let idx = |i: usize, j: usize| (i % k) * k + (j % k);
        let mut edges = Vec::new();
        for i in 0..k {
            for j in 0..k {
                edges.push((idx(i, j), idx(i + 1, j)));
                edges.push((idx(i, j), idx(i, j + 1)));
            }
        }
        let base = k * k;
        for t in 0..80 {
            edges.push((base + t, base + t + 1));
        }
        edges.push((base + 90, base + 91));
        let n = base + 92;
        LaplacianPattern::new(n, &edges)
            .assemble(std::iter::repeat(1.0))
            .plus_diagonal(&vec![0.25; n])
    }

    #[test]
    fn nested_dissection_is_a_permutation() {
        let a = grid_with_islands(20);
        let order = nested_dissection(&a);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..a.n()).collect::<Vec<_>>());
        assert_eq!(order, nested_dissection(&a), "ordering is deterministic");
    }

    #[test]
    fn dissection_ordered_cholesky_solves_and_beats_natural_fill() {
        let a = grid_with_islands(24);
        let n = a.n();
        let chol = Cholesky::factor(&a).unwrap();
        let natural = Cholesky::factor_ordered(&a, &(0..n).collect::<Vec<_>>()).unwrap();
        assert!(chol.factor_nnz() < natural.factor_nnz());
        let b: Vec<f64> = (0..n).map(|i| ((i * 13) % 17) as f64 - 8.0).collect();
        for f in [&chol, &natural] {
            let r = a.matvec(&f.solve(&b));
            assert!(r.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }

    #[test]
    fn factor_ordered_rejects_non_permutations() {
        let a = path_laplacian(4).plus_diagonal(&[1.0; 4]);
        assert!(Cholesky::factor_ordered(&a, &[0, 1, 1, 3]).is_err());
        assert!(Cholesky::factor_ordered(&a, &[0, 1, 2]).is_err());
    }
}
