//! Convex problems `min f(x) s.t. g_j(x) ≤ 0` with quadratic `f` and affine
//! or convex-quadratic `g_j`, plus the primal-dual quantities evaluated on
//! them: `G`, `J_G`, the dual function, the KKT residual and the distance to
//! zero of the saddle subdifferential.

use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::linalg::{axpy, dot, norm2, LinalgError, Matrix, SpdFactor};

/// Smallest eigenvalue accepted by the PSD check.
pub const PSD_TOL: f64 = -1e-10;

/// Relative tolerance of the range test in [`ProblemSpec::dual_value`].
pub const DUAL_RANGE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("problem must have at least one variable")]
    NoVariables,
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("{which} is not positive semidefinite: smallest eigenvalue {min_eig:.6e}")]
    NotPsd { which: String, min_eig: f64 },
    #[error("{which} is not symmetric at ({row}, {col})")]
    NotSymmetric { which: String, row: usize, col: usize },
    #[error("dual variable y[{index}] = {value} is negative")]
    NegativeDual { index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ProblemError>;

/// One inequality `g_j(x) ≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// `⟨a, x⟩ − b ≤ 0`
    Affine { a: Vec<f64>, b: f64 },
    /// `⟨c, x⟩ + ½⟨x, Qx⟩ − b ≤ 0`
    Quadratic { c: Vec<f64>, q: Matrix, b: f64 },
}

impl Constraint {
    /// Linear part (`a` or `c`).
    pub fn linear(&self) -> &[f64] {
        match self {
            Constraint::Affine { a, .. } => a,
            Constraint::Quadratic { c, .. } => c,
        }
    }

    pub fn rhs(&self) -> f64 {
        match self {
            Constraint::Affine { b, .. } | Constraint::Quadratic { b, .. } => *b,
        }
    }

    pub fn quad(&self) -> Option<&Matrix> {
        match self {
            Constraint::Affine { .. } => None,
            Constraint::Quadratic { q, .. } => Some(q),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::Affine { a, b } => dot(a, x) - b,
            Constraint::Quadratic { c, q, b } => dot(c, x) + 0.5 * dot(x, &q.mul_vec(x)) - b,
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Constraint::Affine { a, .. } => a.clone(),
            Constraint::Quadratic { c, q, .. } => {
                let mut g = q.mul_vec(x);
                axpy(1.0, c, &mut g);
                g
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemClass {
    Lp,
    Qp,
    Qcqp,
}

impl std::fmt::Display for ProblemClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProblemClass::Lp => "LP",
            ProblemClass::Qp => "QP",
            ProblemClass::Qcqp => "QCQP",
        })
    }
}

/// A primal-dual pair `z = (x, y)`. Dual feasibility is not enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDualPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PrimalDualPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        PrimalDualPoint { x, y }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        PrimalDualPoint {
            x: vec![0.0; n],
            y: vec![0.0; m],
        }
    }

    pub fn diff(&self, other: &PrimalDualPoint) -> PrimalDualPoint {
        PrimalDualPoint {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a - b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.y);
        v
    }

    pub fn from_flat(n: usize, v: &[f64]) -> Self {
        PrimalDualPoint {
            x: v[..n].to_vec(),
            y: v[n..].to_vec(),
        }
    }

    pub fn norm2(&self) -> f64 {
        (dot(&self.x, &self.x) + dot(&self.y, &self.y)).sqrt()
    }

    pub fn dist2(&self, other: &PrimalDualPoint) -> f64 {
        self.diff(other).norm2()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// Distance to zero of the saddle subdifferential, split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubdiffDistance {
    /// `+∞` exactly when some `y_j < 0`.
    pub value: f64,
    /// `‖∇f(x) + J_G(x)ᵀy‖`
    pub stationarity_part: f64,
    /// `‖(G_I(x))_+‖` over `I = {j : y_j = 0}`
    pub primal_part_active: f64,
    /// `‖G_{I^c}(x)‖`
    pub primal_part_inactive: f64,
}

/// A convex quadratic objective with affine or convex-quadratic inequalities.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    n: usize,
    c: Vec<f64>,
    q: Option<Matrix>,
    constraints: Vec<Constraint>,
    linear_rows: Arc<Matrix>,
    b: Vec<f64>,
    class: ProblemClass,
    q_factor: OnceLock<SpdFactor>,
}

impl PartialEq for ProblemSpec {
    fn eq(&self, other: &Self) -> bool {
        let qa = self.q.as_ref().map(Matrix::triplets).unwrap_or_default();
        let qb = other.q.as_ref().map(Matrix::triplets).unwrap_or_default();
        self.n == other.n
            && self.c == other.c
            && qa == qb
            && self.constraints.len() == other.constraints.len()
            && self.constraints.iter().zip(&other.constraints).all(|(u, v)| {
                u.linear() == v.linear()
                    && u.rhs() == v.rhs()
                    && u.quad().map(Matrix::triplets).unwrap_or_default()
                        == v.quad().map(Matrix::triplets).unwrap_or_default()
                    && matches!(
                        (u, v),
                        (Constraint::Affine { .. }, Constraint::Affine { .. })
                            | (Constraint::Quadratic { .. }, Constraint::Quadratic { .. })
                    )
            })
    }
}

fn check_psd(which: &str, q: &Matrix, n: usize) -> Result<()> {
    if q.rows() != n || q.cols() != n {
        return Err(ProblemError::DimensionMismatch {
            context: format!("{which} rows/cols"),
            expected: n,
            got: if q.rows() != n { q.rows() } else { q.cols() },
        });
    }
    for (i, j, v) in q.triplets() {
        if !v.is_finite() {
            return Err(ProblemError::NonFinite(which.to_string()));
        }
        if q.get(j, i) != v {
            return Err(ProblemError::NotSymmetric {
                which: which.to_string(),
                row: i,
                col: j,
            });
        }
    }
    if q.is_zero() {
        return Ok(());
    }
    let min_eig = q.symmetric_eigenvalues()[0];
    if min_eig < PSD_TOL {
        return Err(ProblemError::NotPsd {
            which: which.to_string(),
            min_eig,
        });
    }
    Ok(())
}

impl ProblemSpec {
    /// Validates dimensions, symmetry and positive semidefiniteness.
    pub fn new(c: Vec<f64>, q: Option<Matrix>, constraints: Vec<Constraint>) -> Result<Self> {
        let n = c.len();
        if n == 0 {
            return Err(ProblemError::NoVariables);
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::NonFinite("objective.c".into()));
        }
        if let Some(q) = &q {
            check_psd("objective.Q", q, n)?;
        }
        let mut triplets = Vec::new();
        let mut b = Vec::with_capacity(constraints.len());
        let mut has_quad = false;
        for (j, con) in constraints.iter().enumerate() {
            let lin = con.linear();
            if lin.len() != n {
                return Err(ProblemError::DimensionMismatch {
                    context: format!("constraints[{j}] linear part"),
                    expected: n,
                    got: lin.len(),
                });
            }
            if lin.iter().any(|v| !v.is_finite()) || !con.rhs().is_finite() {
                return Err(ProblemError::NonFinite(format!("constraints[{j}]")));
            }
            for (i, v) in lin.iter().enumerate() {
                if *v != 0.0 {
                    triplets.push((j, i, *v));
                }
            }
            if let Some(qj) = con.quad() {
                check_psd(&format!("constraints[{j}].Q"), qj, n)?;
                has_quad |= !qj.is_zero();
            }
            b.push(con.rhs());
        }
        let linear_rows = Arc::new(Matrix::from_triplets(constraints.len(), n, &triplets)?);
        let q = q.filter(|q| !q.is_zero());
        let class = if has_quad {
            ProblemClass::Qcqp
        } else if q.is_some() {
            ProblemClass::Qp
        } else {
            ProblemClass::Lp
        };
        Ok(ProblemSpec {
            n,
            c,
            q,
            constraints,
            linear_rows,
            b,
            class,
            q_factor: OnceLock::new(),
        })
    }

    /// `min ⟨c,x⟩ + ½⟨x,Qx⟩ s.t. Ax ≤ b`.
    pub fn affine(c: Vec<f64>, q: Option<Matrix>, a: &Matrix, b: &[f64]) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(ProblemError::DimensionMismatch {
                context: "right-hand side b".into(),
                expected: a.rows(),
                got: b.len(),
            });
        }
        let cons = (0..a.rows())
            .map(|j| Constraint::Affine { a: a.row(j), b: b[j] })
            .collect();
        Self::new(c, q, cons)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Objective Hessian, `None` when zero.
    pub fn q(&self) -> Option<&Matrix> {
        self.q.as_ref()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn class(&self) -> ProblemClass {
        self.class
    }

    pub fn is_affine(&self) -> bool {
        self.class != ProblemClass::Qcqp
    }

    /// Matrix whose row `j` is the linear part of constraint `j`; equals `A`
    /// when every constraint is affine.
    pub fn linear_rows(&self) -> &Arc<Matrix> {
        &self.linear_rows
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    fn check_dims(&self, z: &PrimalDualPoint) -> Result<()> {
        if z.x.len() != self.n {
            return Err(ProblemError::DimensionMismatch {
                context: "x".into(),
                expected: self.n,
                got: z.x.len(),
            });
        }
        if z.y.len() != self.m() {
            return Err(ProblemError::DimensionMismatch {
                context: "y".into(),
                expected: self.m(),
                got: z.y.len(),
            });
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = dot(&self.c, x);
        if let Some(q) = &self.q {
            v += 0.5 * dot(x, &q.mul_vec(x));
        }
        v
    }

    /// `∇f(x) = c + Qx`
    pub fn grad_f(&self, x: &[f64]) -> Vec<f64> {
        match &self.q {
            Some(q) => {
                let mut g = q.mul_vec(x);
                axpy(1.0, &self.c, &mut g);
                g
            }
            None => self.c.clone(),
        }
    }

    /// `G(x)`
    pub fn eval_g(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "eval_g dimension mismatch");
        if self.is_affine() {
            let mut g = self.linear_rows.mul_vec(x);
            axpy(-1.0, &self.b, &mut g);
            return g;
        }
        self.constraints.iter().map(|c| c.eval(x)).collect()
    }

    /// `J_G(x)` as a dense `m × n` matrix.
    pub fn jacobian_g(&self, x: &[f64]) -> Matrix {
        let rows: Vec<Vec<f64>> = self.constraints.iter().map(|c| c.gradient(x)).collect();
        if rows.is_empty() {
            return Matrix::zeros(0, self.n);
        }
        Matrix::from_rows(&rows).expect("constraint gradients share a length")
    }

    /// `J_G(x)ᵀ y` without forming the Jacobian.
    pub fn jacobian_t_mul(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = self.linear_rows.mul_vec_t(y);
        if self.class == ProblemClass::Qcqp {
            for (con, yj) in self.constraints.iter().zip(y) {
                if let (Some(qj), true) = (con.quad(), *yj != 0.0) {
                    axpy(*yj, &qj.mul_vec(x), &mut out);
                }
            }
        }
        out
    }

    /// Smooth parts of the saddle operator: `(∇f + J_Gᵀy, G(x))`.
    pub fn lagrangian_grads(&self, z: &PrimalDualPoint) -> (Vec<f64>, Vec<f64>) {
        let mut gx = self.grad_f(&z.x);
        axpy(1.0, &self.jacobian_t_mul(&z.x, &z.y), &mut gx);
        (gx, self.eval_g(&z.x))
    }

    /// `L(x, y) = f(x) + ⟨y, G(x)⟩`
    pub fn lagrangian(&self, z: &PrimalDualPoint) -> f64 {
        self.objective(&z.x) + dot(&z.y, &self.eval_g(&z.x))
    }

    /// `h(y) = min_x f(x) + ⟨y, G(x)⟩` for `y ≥ 0`.
    ///
    /// The inner problem has Hessian `H = Q + Σ y_j Q_j` and linear term
    /// `r = c + Σ y_j c_j`. When the component of `r` in `ker H` exceeds
    /// `tol·max(1, ‖r‖)` the minimum is `−∞`.
    pub fn dual_value(&self, y: &[f64], tol: f64) -> Result<f64> {
        if y.len() != self.m() {
            return Err(ProblemError::DimensionMismatch {
                context: "y".into(),
                expected: self.m(),
                got: y.len(),
            });
        }
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(ProblemError::NegativeDual { index, value });
        }
        let mut r = self.linear_rows.mul_vec_t(y);
        axpy(1.0, &self.c, &mut r);
        let constant = -dot(y, &self.b);
        let range_tol = tol * norm2(&r).max(1.0);
        let solve = |f: &SpdFactor| match f.solve(&r, range_tol) {
            Ok(x) => Ok(constant - 0.5 * dot(&r, &x)),
            Err(LinalgError::RangeViolation { .. }) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(ProblemError::from(e)),
        };
        match self.class {
            ProblemClass::Lp => {
                if norm2(&r) <= range_tol {
                    Ok(constant)
                } else {
                    Ok(f64::NEG_INFINITY)
                }
            }
            ProblemClass::Qp => {
                let q = self.q.as_ref().expect("QP has a Hessian");
                solve(self.q_factor.get_or_init(|| SpdFactor::new(q)))
            }
            ProblemClass::Qcqp => {
                let mut h = self.q.clone().unwrap_or_else(|| Matrix::zeros(self.n, self.n)).to_dense();
                for (con, yj) in self.constraints.iter().zip(y) {
                    if let (Some(qj), true) = (con.quad(), *yj != 0.0) {
                        h = h.add_scaled(*yj, qj)?;
                    }
                }
                solve(&SpdFactor::new(&h))
            }
        }
    }

    /// `‖[(f − h)_+, G(x)_+, (−y)_+]‖₂`.
    ///
    /// `h` is evaluated at `max(y, 0)`. When it is `−∞` the gap block is
    /// replaced by the stationarity norm `‖∇f(x) + J_G(x)ᵀ max(y, 0)‖`.
    pub fn kkt_residual(&self, z: &PrimalDualPoint, tol: f64) -> f64 {
        self.kkt_parts(z, tol).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The three blocks of [`kkt_residual`](Self::kkt_residual) as norms: `[gap, primal, dual]`.
    pub fn kkt_parts(&self, z: &PrimalDualPoint, tol: f64) -> [f64; 3] {
        let y_plus: Vec<f64> = z.y.iter().map(|v| v.max(0.0)).collect();
        let h = self.dual_value(&y_plus, tol).expect("projected dual is feasible");
        let gap = if h == f64::NEG_INFINITY {
            let mut s = self.grad_f(&z.x);
            axpy(1.0, &self.jacobian_t_mul(&z.x, &y_plus), &mut s);
            norm2(&s)
        } else {
            (self.objective(&z.x) - h).max(0.0)
        };
        let g = self.eval_g(&z.x);
        let primal = g.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let dual = z.y.iter().map(|v| (-v).max(0.0).powi(2)).sum::<f64>().sqrt();
        [gap, primal, dual]
    }

    /// `dist(0, F(z))` where `F` is the saddle subdifferential.
    pub fn saddle_dist(&self, z: &PrimalDualPoint) -> SubdiffDistance {
        let (gx, g) = self.lagrangian_grads(z);
        let stationarity_part = norm2(&gx);
        let mut active = 0.0;
        let mut inactive = 0.0;
        for (gj, yj) in g.iter().zip(&z.y) {
            if *yj == 0.0 {
                active += gj.max(0.0).powi(2);
            } else {
                inactive += gj * gj;
            }
        }
        let (active, inactive) = (active.sqrt(), inactive.sqrt());
        let value = if z.y.iter().any(|v| *v < 0.0) {
            f64::INFINITY
        } else {
            (stationarity_part.powi(2) + active.powi(2) + inactive.powi(2)).sqrt()
        };
        SubdiffDistance {
            value,
            stationarity_part,
            primal_part_active: active,
            primal_part_inactive: inactive,
        }
    }

    /// Dimension check for points handed in from outside.
    pub fn validate_point(&self, z: &PrimalDualPoint) -> Result<()> {
        self.check_dims(z)?;
        if !z.is_finite() {
            return Err(ProblemError::NonFinite("point".into()));
        }
        Ok(())
    }

    /// Sum of operator norms of the constraint Hessians.
    pub fn constraint_hessian_norm_sum(&self) -> Result<f64> {
        let mut s = 0.0;
        for con in &self.constraints {
            if let Some(qj) = con.quad() {
                if !qj.is_zero() {
                    s += crate::linalg::op_norm(qj, 1e-10)?;
                }
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trivial_lp() -> ProblemSpec {
        ProblemSpec::affine(vec![1.0], None, &Matrix::from_rows(&[vec![-1.0]]).unwrap(), &[0.0]).unwrap()
    }

    fn house(c1: f64) -> ProblemSpec {
        let c2 = (1.0 - c1 * c1).sqrt();
        let a = Matrix::from_rows(&[vec![-c1, -c2], vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        ProblemSpec::affine(vec![c1, c2], None, &a, &[-(c1 + c2), 0.0, 0.0]).unwrap()
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_row_slice(n, n, &b).unwrap().gram()
    }

    fn random_qcqp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ProblemSpec {
        let c = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = random_psd(rng, n);
        let cons = (0..m)
            .map(|j| {
                let lin = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if j % 2 == 0 {
                    Constraint::Quadratic { c: lin, q: random_psd(rng, n), b: 1.0 }
                } else {
                    Constraint::Affine { a: lin, b: 1.0 }
                }
            })
            .collect();
        ProblemSpec::new(c, Some(q), cons).unwrap()
    }

    #[test]
    fn eval_g_house_hand_values() {
        // scalar oracle: g1 = (c1 + c2) − c1·x1 − c2·x2, g2 = −x1, g3 = −x2
        let (c1, c2) = (0.6, 0.8);
        let g = house(c1).eval_g(&[1.0, 1.0]);
        assert_relative_eq!(g[0], (c1 + c2) - c1 - c2, epsilon = 1e-15);
        assert_eq!(g[1], -1.0);
        assert_eq!(g[2], -1.0);
    }

    #[test]
    fn zero_problem_is_zero() {
        let p = ProblemSpec::affine(vec![0.0, 0.0], None, &Matrix::zeros(1, 2), &[0.0]).unwrap();
        assert_eq!(p.eval_g(&[3.0, -7.0]), vec![0.0]);
        assert_eq!(p.class(), ProblemClass::Lp);
    }

    #[test]
    fn class_tags() {
        assert_eq!(trivial_lp().class(), ProblemClass::Lp);
        let qp = ProblemSpec::affine(vec![1.0], Some(Matrix::identity(1)), &Matrix::identity(1), &[1.0]).unwrap();
        assert_eq!(qp.class(), ProblemClass::Qp);
        let zero_q = ProblemSpec::affine(vec![1.0], Some(Matrix::zeros(1, 1)), &Matrix::identity(1), &[1.0]).unwrap();
        assert_eq!(zero_q.class(), ProblemClass::Lp);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_qcqp(&mut rng, 2, 2).class(), ProblemClass::Qcqp);
    }

    #[test]
    fn rejects_non_psd_and_bad_dims() {
        let bad = Matrix::from_diag(&[1.0, -0.5]);
        match ProblemSpec::new(vec![0.0, 0.0], Some(bad), vec![]) {
            Err(ProblemError::NotPsd { min_eig, .. }) => assert_relative_eq!(min_eig, -0.5, epsilon = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        let r = ProblemSpec::new(vec![0.0], None, vec![Constraint::Affine { a: vec![1.0, 2.0], b: 0.0 }]);
        assert!(matches!(r, Err(ProblemError::DimensionMismatch { .. })));
        assert!(matches!(ProblemSpec::new(vec![], None, vec![]), Err(ProblemError::NoVariables)));
        // a zero eigenvalue is accepted
        assert!(ProblemSpec::new(vec![0.0, 0.0], Some(Matrix::from_diag(&[1.0, 0.0])), vec![]).is_ok());
    }

    #[test]
    fn jacobian_examples() {
        let p = house(0.6);
        let j = p.jacobian_g(&[5.0, -2.0]);
        assert_eq!(j.triplets(), p.linear_rows().triplets());
        let q = ProblemSpec::new(
            vec![0.0, 0.0],
            None,
            vec![Constraint::Quadratic { c: vec![0.0, 0.0], q: Matrix::identity(2), b: 0.0 }],
        )
        .unwrap();
        assert_eq!(q.jacobian_g(&[1.0, 2.0]).row(0), vec![1.0, 2.0]);
    }

    #[test]
    fn jacobian_and_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-6;
        for _ in 0..50 {
            let (n, m) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let p = random_qcqp(&mut rng, n, m);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..2.0)).collect();
            let z = PrimalDualPoint::new(x.clone(), y.clone());
            let jac = p.jacobian_g(&x);
            let (gx, gy) = p.lagrangian_grads(&z);
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let (gp, gm) = (p.eval_g(&xp), p.eval_g(&xm));
                for j in 0..m {
                    assert!((jac.get(j, i) - (gp[j] - gm[j]) / (2.0 * h)).abs() < 1e-4);
                }
                let lp = p.lagrangian(&PrimalDualPoint::new(xp, y.clone()));
                let lm = p.lagrangian(&PrimalDualPoint::new(xm, y.clone()));
                assert!((gx[i] - (lp - lm) / (2.0 * h)).abs() < 1e-4);
            }
            for j in 0..m {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let lp = p.lagrangian(&PrimalDualPoint::new(x.clone(), yp));
                let lm = p.lagrangian(&PrimalDualPoint::new(x.clone(), ym));
                assert!((gy[j] - (lp - lm) / (2.0 * h)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn lagrangian_grads_lp() {
        let p = house(0.6);
        let z = PrimalDualPoint::new(vec![0.3, -1.0], vec![0.5, 1.0, 2.0]);
        let (gx, gy) = p.lagrangian_grads(&z);
        let mut expect = p.linear_rows().mul_vec_t(&z.y);
        axpy(1.0, p.c(), &mut expect);
        assert_eq!(gx, expect);
        assert_eq!(gy, p.eval_g(&z.x));
    }

    #[test]
    fn dual_value_lp_cases() {
        let p = trivial_lp();
        assert_eq!(p.dual_value(&[1.0], DUAL_RANGE_TOL).unwrap(), 0.0);
        assert_eq!(p.dual_value(&[0.5], DUAL_RANGE_TOL).unwrap(), f64::NEG_INFINITY);
        let house = house(0.6);
        // c + Aᵀy = 0 at y = (1,0,0); h = −⟨b,y⟩ = ‖c‖₁
        assert_relative_eq!(house.dual_value(&[1.0, 0.0, 0.0], DUAL_RANGE_TOL).unwrap(), 1.4, epsilon = 1e-14);
        assert!(matches!(p.dual_value(&[-1.0], DUAL_RANGE_TOL), Err(ProblemError::NegativeDual { .. })));
    }

    #[test]
    fn dual_value_strictly_convex_qp() {
        // min ½x² + x s.t. x − 1 ≤ 0; h(y) = −(1 + y)²/2 − y
        let p = ProblemSpec::affine(vec![1.0], Some(Matrix::identity(1)), &Matrix::identity(1), &[1.0]).unwrap();
        for y in [0.0, 0.3, 2.0] {
            assert_relative_eq!(
                p.dual_value(&[y], DUAL_RANGE_TOL).unwrap(),
                -(1.0 + y) * (1.0 + y) / 2.0 - y,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn kkt_examples() {
        let p = trivial_lp();
        assert_eq!(p.kkt_residual(&PrimalDualPoint::new(vec![0.0], vec![1.0]), DUAL_RANGE_TOL), 0.0);
        let h = house(0.6);
        let z = PrimalDualPoint::new(vec![1.0, 1.0], vec![-1.0, 0.0, 0.0]);
        assert!(h.kkt_residual(&z, DUAL_RANGE_TOL) >= 1.0);
    }

    #[test]
    fn saddle_dist_house_witnesses() {
        let (c1, c2) = (0.6, 0.8);
        let p = house(c1);
        let x_star = [7.0 / 6.0, 0.875];
        let tau = 2.0;
        let z = PrimalDualPoint::new(vec![x_star[0] + tau * c1, x_star[1] + tau * c2], vec![0.0; 3]);
        assert_relative_eq!(p.saddle_dist(&z).value, 1.0, epsilon = 1e-10);
        let eps = 0.1;
        let w = PrimalDualPoint::new(vec![0.0, 1.0 + c1 / c2 + eps], vec![1.0, 0.0, 0.0]);
        assert_relative_eq!(p.saddle_dist(&w).value, c2 * eps, epsilon = 1e-10);
        let neg = PrimalDualPoint::new(vec![1.0, 1.0], vec![1.0, -1e-300, 0.0]);
        assert_eq!(p.saddle_dist(&neg).value, f64::INFINITY);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn subdiff_parts_compose(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, m) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let p = random_qcqp(&mut rng, n, m);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..m).map(|_| if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.0..2.0) }).collect();
            let d = p.saddle_dist(&PrimalDualPoint::new(x, y));
            let sq = d.stationarity_part.powi(2) + d.primal_part_active.powi(2) + d.primal_part_inactive.powi(2);
            prop_assert!((d.value * d.value - sq).abs() <= 1e-12 * sq.max(1.0));
        }

        #[test]
        fn weak_duality(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, m) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let p = random_qcqp(&mut rng, n, m);
            // x = 0 is feasible since every b_j = 1
            let x = vec![0.0; n];
            for _ in 0..100 {
                let y: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..3.0)).collect();
                let h = p.dual_value(&y, DUAL_RANGE_TOL).unwrap();
                prop_assert!(h <= p.objective(&x) + 1e-9);
            }
        }
    }
}
