//! Dense/sparse matrix kernels, iterative solves and the algorithm P-seminorms.
//!
//! Everything here is small-scale numerics: matrices are row-major dense or
//! CSR, vectors are plain `Vec<f64>`/`&[f64]`. Eigendecompositions are handed
//! to `nalgebra`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::problem::PrimalDualPoint;

/// Absolute residual tolerance used for inner linear solves.
pub const INNER_SOLVE_TOL: f64 = 1e-12;

/// Largest dimension for which P is materialized densely in [`PSeminorm::eigen_extremes`].
pub const DENSE_EIGEN_LIMIT: usize = 2000;

const POWER_ITER_CAP: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{method} did not converge within its iteration cap of {cap} (residual {residual:.3e})")]
    IterationCap {
        method: &'static str,
        cap: usize,
        residual: f64,
    },
    #[error("right-hand side has a component of norm {residual:.3e} outside the range of the matrix")]
    RangeViolation { residual: f64 },
    #[error("operator norm requested for a zero matrix")]
    ZeroMatrix,
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("entry ({row}, {col}) out of bounds for a {rows}x{cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate entry ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

// ---------------------------------------------------------------------------
// vector helpers
// ---------------------------------------------------------------------------

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(alpha: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| alpha * x).collect()
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
struct Csr {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Sparse(Csr),
}

/// A real matrix in row-major dense or CSR storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    storage: Storage,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            storage: Storage::Dense(vec![0.0; rows * cols]),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in d.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    /// Builds a dense matrix from a row-major slice.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                context: "Matrix::from_row_slice",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix {
            rows,
            cols,
            storage: Storage::Dense(data.to_vec()),
        })
    }

    /// Builds a dense matrix from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_slice(rows.len(), cols, &data)
    }

    /// Builds a CSR matrix from coordinate triplets. Duplicates are rejected.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(row, col, _) in &sorted {
            if row >= rows || col >= cols {
                return Err(LinalgError::OutOfBounds { row, col, rows, cols });
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        for w in sorted.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(LinalgError::DuplicateEntry { row: w[0].0, col: w[0].1 });
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Matrix {
            rows,
            cols,
            storage: Storage::Sparse(Csr { row_ptr, col_idx, values }),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "matrix index out of bounds");
        match &self.storage {
            Storage::Dense(d) => d[i * self.cols + j],
            Storage::Sparse(s) => {
                let (lo, hi) = (s.row_ptr[i], s.row_ptr[i + 1]);
                match s.col_idx[lo..hi].binary_search(&j) {
                    Ok(k) => s.values[lo + k],
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// Sets an entry, converting sparse storage to dense first.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.rows && j < self.cols, "matrix index out of bounds");
        if self.is_sparse() {
            *self = self.to_dense();
        }
        if let Storage::Dense(d) = &mut self.storage {
            d[i * self.cols + j] = v;
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for (i, j, v) in self.triplets() {
            data[i * self.cols + j] = v;
        }
        Matrix {
            rows: self.rows,
            cols: self.cols,
            storage: Storage::Dense(data),
        }
    }

    pub fn to_sparse(&self) -> Matrix {
        let t = self.triplets();
        Matrix::from_triplets(self.rows, self.cols, &t).expect("triplets of a valid matrix")
    }

    /// Nonzero entries in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        match &self.storage {
            Storage::Dense(d) => {
                for i in 0..self.rows {
                    for j in 0..self.cols {
                        let v = d[i * self.cols + j];
                        if v != 0.0 {
                            out.push((i, j, v));
                        }
                    }
                }
            }
            Storage::Sparse(s) => {
                for i in 0..self.rows {
                    for k in s.row_ptr[i]..s.row_ptr[i + 1] {
                        if s.values[k] != 0.0 {
                            out.push((i, s.col_idx[k], s.values[k]));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.triplets().is_empty()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.cols];
        match &self.storage {
            Storage::Dense(d) => r.copy_from_slice(&d[i * self.cols..(i + 1) * self.cols]),
            Storage::Sparse(s) => {
                for k in s.row_ptr[i]..s.row_ptr[i + 1] {
                    r[s.col_idx[k]] = s.values[k];
                }
            }
        }
        r
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        match &self.storage {
            Storage::Dense(d) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(&d[i * self.cols..(i + 1) * self.cols], x);
                }
            }
            Storage::Sparse(s) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in s.row_ptr[i]..s.row_ptr[i + 1] {
                        acc += s.values[k] * x[s.col_idx[k]];
                    }
                    *o = acc;
                }
            }
        }
        out
    }

    /// `Aᵀ y`
    pub fn mul_vec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "mul_vec_t dimension mismatch");
        let mut out = vec![0.0; self.cols];
        match &self.storage {
            Storage::Dense(d) => {
                for (i, yi) in y.iter().enumerate() {
                    if *yi != 0.0 {
                        axpy(*yi, &d[i * self.cols..(i + 1) * self.cols], &mut out);
                    }
                }
            }
            Storage::Sparse(s) => {
                for (i, yi) in y.iter().enumerate() {
                    for k in s.row_ptr[i]..s.row_ptr[i + 1] {
                        out[s.col_idx[k]] += s.values[k] * yi;
                    }
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for (i, j, v) in self.triplets() {
            t.set(j, i, v);
        }
        t
    }

    /// Dense `AᵀA`.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            let nz: Vec<(usize, f64)> = r.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
            for &(a, va) in &nz {
                for &(b, vb) in &nz {
                    let cur = g.get(a, b);
                    g.set(a, b, cur + va * vb);
                }
            }
        }
        g
    }

    /// `self + alpha * other`, dense result.
    pub fn add_scaled(&self, alpha: f64, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                context: "Matrix::add_scaled",
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        let mut out = self.to_dense();
        for (i, j, v) in other.triplets() {
            let cur = out.get(i, j);
            out.set(i, j, cur + alpha * v);
        }
        Ok(out)
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        let mut out = self.clone();
        match &mut out.storage {
            Storage::Dense(d) => d.iter_mut().for_each(|v| *v *= alpha),
            Storage::Sparse(s) => s.values.iter_mut().for_each(|v| *v *= alpha),
        }
        out
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Eigenvalues of a symmetric matrix in ascending order.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        assert_eq!(self.rows, self.cols, "eigenvalues of a non-square matrix");
        if self.rows == 0 {
            return Vec::new();
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_nalgebra()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }
}

// ---------------------------------------------------------------------------
// operator norm
// ---------------------------------------------------------------------------

/// Deterministic starting vector for power iteration: `v_i = 1 + sin(i + 1) / 2`.
fn power_seed(n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i + 1) as f64).sin()).collect();
    let nv = norm2(&v);
    scale(1.0 / nv, &v)
}

/// Spectral norm `‖A‖_op` by power iteration on `AᵀA`.
///
/// Stops once the eigen-residual `‖AᵀAv − λv‖` drops below `tol·λ`.
pub fn op_norm(a: &Matrix, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(LinalgError::InvalidTolerance(tol));
    }
    if a.is_zero() {
        return Err(LinalgError::ZeroMatrix);
    }
    let mut v = power_seed(a.cols());
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_ITER_CAP {
        let w = a.mul_vec_t(&a.mul_vec(&v));
        let lambda = dot(&v, &w);
        let r: Vec<f64> = w.iter().zip(&v).map(|(wi, vi)| wi - lambda * vi).collect();
        residual = norm2(&r);
        let nw = norm2(&w);
        if nw == 0.0 {
            // seed orthogonal to the row space; restart from a basis vector
            v = vec![0.0; a.cols()];
            let (_, j, _) = a.triplets()[0];
            v[j] = 1.0;
            continue;
        }
        if residual <= tol * lambda {
            return Ok(lambda.sqrt());
        }
        v = scale(1.0 / nw, &w);
    }
    Err(LinalgError::IterationCap {
        method: "power iteration",
        cap: POWER_ITER_CAP,
        residual,
    })
}

// ---------------------------------------------------------------------------
// symmetric PSD solves
// ---------------------------------------------------------------------------

/// Solves `Mx = rhs` for symmetric PSD `M` by conjugate gradients.
///
/// Succeeds when `‖Mx − rhs‖ ≤ tol·max(1, ‖rhs‖)`. A right-hand side with a
/// component outside `range(M)` shows up as residual stagnation (or a
/// curvature breakdown) and is reported as [`LinalgError::RangeViolation`].
pub fn solve_spd(m: &Matrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = m.rows();
    if m.cols() != n || rhs.len() != n {
        return Err(LinalgError::DimensionMismatch {
            context: "solve_spd",
            expected: n,
            got: rhs.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(LinalgError::InvalidTolerance(tol));
    }
    let target = tol * norm2(rhs).max(1.0);
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= target {
        return Ok(x);
    }
    let mut p = r.clone();
    let scale_m = m.triplets().iter().map(|t| t.2.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let cap = 20 * n.max(1) + 50;
    let mut best = rr.sqrt();
    let mut since_best = 0usize;
    for _ in 0..cap {
        let mp = m.mul_vec(&p);
        let curvature = dot(&p, &mp);
        if curvature <= 1e-14 * scale_m * dot(&p, &p) {
            // search direction lies in ker(M): the residual cannot be reduced
            return Err(LinalgError::RangeViolation { residual: rr.sqrt() });
        }
        let alpha = rr / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &mp, &mut r);
        let rr_new = dot(&r, &r);
        let res = rr_new.sqrt();
        if res <= target {
            // recompute the true residual to guard against drift
            let true_r = sub(rhs, &m.mul_vec(&x));
            if norm2(&true_r) <= target {
                return Ok(x);
            }
            r = true_r;
            rr = dot(&r, &r);
            p = r.clone();
            continue;
        }
        if res < 0.5 * best {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > 2 * n + 10 {
                return Err(LinalgError::RangeViolation { residual: res });
            }
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    Err(LinalgError::IterationCap {
        method: "conjugate gradients",
        cap,
        residual: rr.sqrt(),
    })
}

/// Cached spectral factorization of a fixed symmetric PSD matrix.
///
/// Used where the same matrix is solved against every iteration (ADMM
/// x-update, PDHG prox, QP dual function). Solves return the minimum-norm
/// solution and report a range violation when the right-hand side has a
/// kernel component larger than the requested tolerance.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    n: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    threshold: f64,
}

impl SpdFactor {
    pub fn new(m: &Matrix) -> Self {
        assert_eq!(m.rows(), m.cols(), "SpdFactor of a non-square matrix");
        let n = m.rows();
        let eig = SymmetricEigen::new(m.to_nalgebra());
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        SpdFactor {
            n,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
            threshold: 1e-12 * lmax.max(f64::MIN_POSITIVE),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Norm of the component of `rhs` in the numerical kernel.
    pub fn kernel_residual(&self, rhs: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            if *lam <= self.threshold {
                let c: f64 = (0..self.n).map(|i| self.eigenvectors[(i, k)] * rhs[i]).sum();
                acc += c * c;
            }
        }
        acc.sqrt()
    }

    /// Minimum-norm solution of `Mx = rhs`; errors when the kernel component
    /// of `rhs` exceeds `range_tol`.
    pub fn solve(&self, rhs: &[f64], range_tol: f64) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                context: "SpdFactor::solve",
                expected: self.n,
                got: rhs.len(),
            });
        }
        let mut x = vec![0.0; self.n];
        let mut ker = 0.0;
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            let c: f64 = (0..self.n).map(|i| self.eigenvectors[(i, k)] * rhs[i]).sum();
            if *lam <= self.threshold {
                ker += c * c;
            } else {
                let coef = c / lam;
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += coef * self.eigenvectors[(i, k)];
                }
            }
        }
        let ker = ker.sqrt();
        if ker > range_tol {
            return Err(LinalgError::RangeViolation { residual: ker });
        }
        Ok(x)
    }
}

// ---------------------------------------------------------------------------
// P-seminorms
// ---------------------------------------------------------------------------

/// Shape of the algorithm-specific matrix `P`.
#[derive(Clone, Debug)]
pub enum PKind {
    /// `P = I/η`
    ScaledIdentity,
    /// `P = [[I/η, −Aᵀ], [−A, I/η]]`
    Pdhg(Arc<Matrix>),
    /// `P = [[ηAᵀA, Aᵀ], [A, I/η]]`, singular with kernel `{y + ηAx = 0}`
    Admm(Arc<Matrix>),
}

/// A (semi)norm `‖z‖_P = √(zᵀPz)` on primal-dual space.
#[derive(Clone, Debug)]
pub struct PSeminorm {
    kind: PKind,
    eta: f64,
    n: usize,
    m: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenExtremes {
    pub lambda_max: f64,
    /// Smallest eigenvalue above the numerical-zero threshold.
    pub lambda_min_plus: f64,
    /// Smallest eigenvalue of the full matrix (may be ≤ 0).
    pub lambda_min: f64,
}

impl EigenExtremes {
    pub fn condition_number(&self) -> f64 {
        self.lambda_max / self.lambda_min_plus
    }
}

impl PSeminorm {
    pub fn scaled_identity(eta: f64, n: usize, m: usize) -> Self {
        assert!(eta > 0.0, "stepsize must be positive");
        PSeminorm {
            kind: PKind::ScaledIdentity,
            eta,
            n,
            m,
        }
    }

    /// The Euclidean norm on `R^{n+m}`.
    pub fn identity(n: usize, m: usize) -> Self {
        Self::scaled_identity(1.0, n, m)
    }

    pub fn pdhg(eta: f64, a: Arc<Matrix>) -> Self {
        assert!(eta > 0.0, "stepsize must be positive");
        let (m, n) = (a.rows(), a.cols());
        PSeminorm {
            kind: PKind::Pdhg(a),
            eta,
            n,
            m,
        }
    }

    pub fn admm(eta: f64, a: Arc<Matrix>) -> Self {
        assert!(eta > 0.0, "stepsize must be positive");
        let (m, n) = (a.rows(), a.cols());
        PSeminorm {
            kind: PKind::Admm(a),
            eta,
            n,
            m,
        }
    }

    pub fn kind(&self) -> &PKind {
        &self.kind
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn is_positive_definite_kind(&self) -> bool {
        !matches!(self.kind, PKind::Admm(_))
    }

    /// `η‖A‖_op < 1` for PDHG; always true for the other kinds.
    pub fn is_valid(&self) -> Result<bool> {
        match &self.kind {
            PKind::Pdhg(a) => {
                if a.is_zero() {
                    return Ok(true);
                }
                Ok(self.eta * op_norm(a, 1e-10)? < 1.0)
            }
            _ => Ok(true),
        }
    }

    fn check(&self, z: &PrimalDualPoint) -> Result<()> {
        if z.x.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                context: "PSeminorm (x block)",
                expected: self.n,
                got: z.x.len(),
            });
        }
        if z.y.len() != self.m {
            return Err(LinalgError::DimensionMismatch {
                context: "PSeminorm (y block)",
                expected: self.m,
                got: z.y.len(),
            });
        }
        Ok(())
    }

    /// `‖z‖_P`.
    pub fn eval(&self, z: &PrimalDualPoint) -> Result<f64> {
        self.check(z)?;
        let eta = self.eta;
        let v = match &self.kind {
            PKind::ScaledIdentity => (dot(&z.x, &z.x) + dot(&z.y, &z.y)) / eta,
            PKind::Pdhg(a) => {
                let ax = a.mul_vec(&z.x);
                (dot(&z.x, &z.x) + dot(&z.y, &z.y)) / eta - 2.0 * dot(&z.y, &ax)
            }
            PKind::Admm(a) => {
                let ax = a.mul_vec(&z.x);
                let w: Vec<f64> = ax.iter().zip(&z.y).map(|(p, q)| p + q / eta).collect();
                eta * dot(&w, &w)
            }
        };
        Ok(v.max(0.0).sqrt())
    }

    /// `‖a − b‖_P`.
    pub fn dist(&self, a: &PrimalDualPoint, b: &PrimalDualPoint) -> Result<f64> {
        self.eval(&a.diff(b))
    }

    /// The product `Pz`, returned as `(x-block, y-block)`.
    pub fn apply(&self, z: &PrimalDualPoint) -> Result<PrimalDualPoint> {
        self.check(z)?;
        let eta = self.eta;
        Ok(match &self.kind {
            PKind::ScaledIdentity => PrimalDualPoint::new(scale(1.0 / eta, &z.x), scale(1.0 / eta, &z.y)),
            PKind::Pdhg(a) => {
                let aty = a.mul_vec_t(&z.y);
                let ax = a.mul_vec(&z.x);
                let px = z.x.iter().zip(&aty).map(|(x, t)| x / eta - t).collect();
                let py = z.y.iter().zip(&ax).map(|(y, t)| y / eta - t).collect();
                PrimalDualPoint::new(px, py)
            }
            PKind::Admm(a) => {
                let ax = a.mul_vec(&z.x);
                let w: Vec<f64> = ax.iter().zip(&z.y).map(|(p, q)| eta * p + q).collect();
                let px = a.mul_vec_t(&w);
                let py = w.iter().map(|v| v / eta).collect();
                PrimalDualPoint::new(px, py)
            }
        })
    }

    /// Explicit dense `P`.
    pub fn dense(&self) -> Matrix {
        let (n, m, eta) = (self.n, self.m, self.eta);
        let d = n + m;
        let mut p = Matrix::zeros(d, d);
        match &self.kind {
            PKind::ScaledIdentity => {
                for i in 0..d {
                    p.set(i, i, 1.0 / eta);
                }
            }
            PKind::Pdhg(a) => {
                for i in 0..d {
                    p.set(i, i, 1.0 / eta);
                }
                for (i, j, v) in a.triplets() {
                    p.set(n + i, j, -v);
                    p.set(j, n + i, -v);
                }
            }
            PKind::Admm(a) => {
                let g = a.gram();
                for (i, j, v) in g.triplets() {
                    p.set(i, j, eta * v);
                }
                for (i, j, v) in a.triplets() {
                    p.set(n + i, j, v);
                    p.set(j, n + i, v);
                }
                for i in 0..m {
                    p.set(n + i, n + i, 1.0 / eta);
                }
            }
        }
        p
    }

    /// Largest, smallest-positive and smallest eigenvalue of `P`.
    ///
    /// Dense eigendecomposition up to [`DENSE_EIGEN_LIMIT`]; beyond that the
    /// block structure reduces everything to singular values of `A`.
    pub fn eigen_extremes(&self) -> Result<EigenExtremes> {
        let d = self.n + self.m;
        if d <= DENSE_EIGEN_LIMIT {
            let ev = self.dense().symmetric_eigenvalues();
            return Ok(extremes_from_spectrum(&ev));
        }
        let inv = 1.0 / self.eta;
        match &self.kind {
            PKind::ScaledIdentity => Ok(EigenExtremes {
                lambda_max: inv,
                lambda_min_plus: inv,
                lambda_min: inv,
            }),
            PKind::Pdhg(a) => {
                // spectrum is {1/η ± σ_i(A)} ∪ {1/η}
                let s = if a.is_zero() { 0.0 } else { op_norm(a, 1e-12)? };
                let lo = inv - s;
                if lo <= 0.0 {
                    return Err(LinalgError::Unsupported(
                        "smallest positive eigenvalue of an indefinite PDHG matrix above the dense limit".into(),
                    ));
                }
                Ok(EigenExtremes {
                    lambda_max: inv + s,
                    lambda_min_plus: lo,
                    lambda_min: lo,
                })
            }
            PKind::Admm(a) => {
                // nonzero spectrum equals that of ηAAᵀ + I/η (m×m)
                if self.m > DENSE_EIGEN_LIMIT {
                    return Err(LinalgError::Unsupported(
                        "ADMM matrix with more than the dense-limit constraints".into(),
                    ));
                }
                let aat = a.transpose().gram();
                let small = aat.scaled(self.eta).add_scaled(inv, &Matrix::identity(self.m))?;
                let ev = small.symmetric_eigenvalues();
                Ok(EigenExtremes {
                    lambda_max: *ev.last().unwrap(),
                    lambda_min_plus: ev[0],
                    lambda_min: 0.0,
                })
            }
        }
    }
}

fn extremes_from_spectrum(ev: &[f64]) -> EigenExtremes {
    let lambda_max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let thr = 1e-10 * lambda_max.abs().max(lambda_min.abs()).max(f64::MIN_POSITIVE);
    let lambda_min_plus = ev.iter().copied().filter(|v| *v > thr).fold(f64::INFINITY, f64::min);
    EigenExtremes {
        lambda_max,
        lambda_min_plus,
        lambda_min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_row_slice(r, c, &data).unwrap()
    }

    #[test]
    fn op_norm_identity_and_diagonal() {
        assert_relative_eq!(op_norm(&Matrix::identity(3), 1e-8).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(op_norm(&Matrix::from_diag(&[3.0, 1.0]), 1e-8).unwrap(), 3.0, max_relative = 1e-8);
    }

    #[test]
    fn op_norm_rejects_zero_and_bad_tol() {
        assert_eq!(op_norm(&Matrix::zeros(2, 2), 1e-8), Err(LinalgError::ZeroMatrix));
        assert!(matches!(op_norm(&Matrix::identity(2), 0.0), Err(LinalgError::InvalidTolerance(_))));
    }

    #[test]
    fn op_norm_matches_svd_on_small_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r = rng.gen_range(1..=4);
            let c = rng.gen_range(1..=6);
            let (r, c) = if rng.gen_bool(0.5) { (r, c) } else { (c, r) };
            let a = random_matrix(&mut rng, r, c);
            let oracle = a.to_nalgebra().singular_values().max();
            let got = op_norm(&a, 1e-10).unwrap();
            assert_relative_eq!(got, oracle, max_relative = 1e-6);
        }
    }

    #[test]
    fn sparse_and_dense_agree() {
        let a = Matrix::from_triplets(3, 2, &[(0, 0, 1.0), (2, 1, -2.0), (1, 0, 0.5)]).unwrap();
        let d = a.to_dense();
        assert!(a.is_sparse() && !d.is_sparse());
        assert_eq!(a.mul_vec(&[1.0, 2.0]), d.mul_vec(&[1.0, 2.0]));
        assert_eq!(a.mul_vec_t(&[1.0, 2.0, 3.0]), d.mul_vec_t(&[1.0, 2.0, 3.0]));
        assert_eq!(a.get(2, 1), -2.0);
        assert_eq!(a.get(2, 0), 0.0);
        assert!(matches!(
            Matrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0)]),
            Err(LinalgError::DuplicateEntry { .. })
        ));
        assert!(matches!(
            Matrix::from_triplets(2, 2, &[(2, 0, 1.0)]),
            Err(LinalgError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn solve_spd_examples() {
        let x = solve_spd(&Matrix::identity(2), &[1.0, 2.0], 1e-12).unwrap();
        assert_relative_eq!(x[0], 1.0);
        assert_relative_eq!(x[1], 2.0);
        let m = Matrix::from_diag(&[2.0, 0.0]);
        let x = solve_spd(&m, &[4.0, 0.0], 1e-12).unwrap();
        assert_relative_eq!(x[0], 2.0);
        assert_eq!(x[1], 0.0);
        assert!(matches!(
            solve_spd(&m, &[4.0, 1.0], 1e-12),
            Err(LinalgError::RangeViolation { .. })
        ));
    }

    #[test]
    fn solve_spd_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(1..=50);
            let b = random_matrix(&mut rng, n, n);
            let m = b.gram().add_scaled(0.1, &Matrix::identity(n)).unwrap();
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = solve_spd(&m, &rhs, 1e-12).unwrap();
            let res = norm2(&sub(&m.mul_vec(&x), &rhs));
            assert!(res <= 1e-12 * norm2(&rhs).max(1.0), "residual {res}");
        }
    }

    #[test]
    fn spd_factor_singular_consistent_and_inconsistent() {
        let f = SpdFactor::new(&Matrix::from_diag(&[2.0, 0.0]));
        assert_eq!(f.solve(&[4.0, 0.0], 1e-12).unwrap(), vec![2.0, 0.0]);
        assert!(matches!(f.solve(&[4.0, 1.0], 1e-9), Err(LinalgError::RangeViolation { .. })));
    }

    #[test]
    fn seminorm_examples() {
        let z = PrimalDualPoint::new(vec![3.0, 4.0], vec![]);
        assert_relative_eq!(PSeminorm::identity(2, 0).eval(&z).unwrap(), 5.0);
        let a = Arc::new(Matrix::from_rows(&[vec![1.0]]).unwrap());
        let p = PSeminorm::admm(1.0, a);
        let k = PrimalDualPoint::new(vec![1.0], vec![-1.0]);
        assert_eq!(p.eval(&k).unwrap(), 0.0);
        let bad = PrimalDualPoint::new(vec![1.0, 2.0], vec![-1.0]);
        assert!(matches!(p.eval(&bad), Err(LinalgError::DimensionMismatch { .. })));
    }

    #[test]
    fn seminorms_match_dense_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (m, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let a = Arc::new(random_matrix(&mut rng, m, n));
            let eta = rng.gen_range(0.05..2.0);
            for p in [
                PSeminorm::pdhg(eta, a.clone()),
                PSeminorm::admm(eta, a.clone()),
                PSeminorm::scaled_identity(eta, n, m),
            ] {
                let z = PrimalDualPoint::new(
                    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                );
                let flat = z.to_flat();
                let quad = dot(&flat, &p.dense().mul_vec(&flat));
                if quad >= 0.0 {
                    assert_relative_eq!(p.eval(&z).unwrap(), quad.sqrt(), max_relative = 1e-9, epsilon = 1e-12);
                }
                let pz = p.apply(&z).unwrap().to_flat();
                let dense = p.dense().mul_vec(&flat);
                for (u, v) in pz.iter().zip(&dense) {
                    assert_relative_eq!(u, v, epsilon = 1e-12, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn eigen_extremes_examples() {
        let e = PSeminorm::scaled_identity(2.0, 3, 2).eigen_extremes().unwrap();
        assert_relative_eq!(e.lambda_max, 0.5, epsilon = 1e-14);
        assert_relative_eq!(e.lambda_min_plus, 0.5, epsilon = 1e-14);
        let a = Arc::new(Matrix::from_rows(&[vec![1.0]]).unwrap());
        let e = PSeminorm::admm(1.0, a).eigen_extremes().unwrap();
        // [[1,1],[1,1]] has spectrum {0, 2}
        assert_relative_eq!(e.lambda_min_plus, 2.0, max_relative = 1e-12);
        assert_relative_eq!(e.lambda_max, 2.0, max_relative = 1e-12);
        assert!(e.lambda_min.abs() < 1e-12);
    }

    #[test]
    fn pdhg_spectrum_is_inverse_stepsize_plus_minus_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = Arc::new(random_matrix(&mut rng, 3, 4));
            let s = op_norm(&a, 1e-12).unwrap();
            let eta = 0.9 / s;
            let e = PSeminorm::pdhg(eta, a).eigen_extremes().unwrap();
            assert_relative_eq!(e.lambda_max, 1.0 / eta + s, max_relative = 1e-9);
            assert_relative_eq!(e.lambda_min, 1.0 / eta - s, max_relative = 1e-8);
        }
    }

    fn metric(kind: u8, eta: f64, a: Arc<Matrix>) -> PSeminorm {
        let (m, n) = (a.rows(), a.cols());
        match kind {
            0 => PSeminorm::scaled_identity(eta, n, m),
            // stepsize stays below 1/||A|| so P is positive definite
            1 => PSeminorm::pdhg(0.99 * eta.min(1.0) / op_norm(&a, 1e-12).unwrap(), a),
            _ => PSeminorm::admm(eta, a),
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]

        #[test]
        fn admm_kernel_vectors_have_zero_seminorm(
            seed in 0u64..u64::MAX, m in 1usize..6, n in 1usize..6, eta in 0.01f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Arc::new(random_matrix(&mut rng, m, n));
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y = scale(-eta, &a.mul_vec(&x));
            let z = PrimalDualPoint::new(x, y);
            let p = PSeminorm::admm(eta, a);
            proptest::prop_assert!(p.eval(&z).unwrap() <= 1e-9 * (1.0 + norm2(&z.to_flat())));
        }

        #[test]
        fn seminorm_is_equivalent_to_euclidean_on_range(
            seed in 0u64..u64::MAX, m in 1usize..5, n in 1usize..5, eta in 0.05f64..5.0, kind in 0u8..3,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Arc::new(random_matrix(&mut rng, m, n));
            let p = metric(kind, eta, a);
            let w = PrimalDualPoint::new(
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            // P w lies in range(P)
            let z = p.apply(&w).unwrap();
            let e = p.eigen_extremes().unwrap();
            let norm = norm2(&z.to_flat());
            let pn = p.eval(&z).unwrap();
            let slack = 1e-9 * (1.0 + norm * e.lambda_max.sqrt());
            proptest::prop_assert!(e.lambda_min_plus.sqrt() * norm <= pn + slack);
            proptest::prop_assert!(pn <= e.lambda_max.sqrt() * norm + slack);
        }

        #[test]
        fn seminorm_is_homogeneous_and_subadditive(
            seed in 0u64..u64::MAX, m in 1usize..5, n in 1usize..5, eta in 0.05f64..5.0, kind in 0u8..3, t in -5.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Arc::new(random_matrix(&mut rng, m, n));
            let p = metric(kind, eta, a);
            let mut draw = || PrimalDualPoint::new(
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            let (u, v) = (draw(), draw());
            let (pu, pv) = (p.eval(&u).unwrap(), p.eval(&v).unwrap());
            let sum = PrimalDualPoint::from_flat(n, &add(&u.to_flat(), &v.to_flat()));
            proptest::prop_assert!(p.eval(&sum).unwrap() <= pu + pv + 1e-10);
            let tu = PrimalDualPoint::from_flat(n, &scale(t, &u.to_flat()));
            proptest::prop_assert!((p.eval(&tu).unwrap() - t.abs() * pu).abs() <= 1e-10 * (1.0 + pu));
        }
    }
}
