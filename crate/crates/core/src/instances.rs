//! Built-in instances with exactly known solution sets, seeded random
//! generators, and problem/point file I/O.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::format::{self, Document, FormatError};
use crate::linalg::{dot, norm2, op_norm, Matrix};
use crate::problem::{Constraint, PrimalDualPoint, ProblemError, ProblemSpec};
use crate::solvers::{self, Algorithm, SolverConfig, SolverError, Status};

pub const PROBLEM_HEADER: &str = "saddlekit-problem v1";
pub const POINT_HEADER: &str = "saddlekit-point v1";

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("unknown built-in `{0}` (see `builtin-list`)")]
    UnknownBuiltin(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("generator post-check failed after {attempts} attempts: {last}")]
    PostCheck { attempts: usize, last: String },
    #[error("{path}: {source}")]
    File { path: String, source: FormatError },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

pub type Result<T> = std::result::Result<T, InstanceError>;

/// Closed set of the form `X × Y` used by exact distance oracles.
#[derive(Clone, Debug, PartialEq)]
pub enum XSet {
    /// Segment `[a, b]` (a point when `a == b`).
    Segment(Vec<f64>, Vec<f64>),
    /// Hyperplane `{x : ⟨normal, x⟩ = offset}`.
    Hyperplane { normal: Vec<f64>, offset: f64 },
}

fn segment_dist(a: &[f64], b: &[f64], p: &[f64]) -> f64 {
    let d: Vec<f64> = b.iter().zip(a).map(|(u, v)| u - v).collect();
    let dd = dot(&d, &d);
    let ap: Vec<f64> = p.iter().zip(a).map(|(u, v)| u - v).collect();
    let t = if dd == 0.0 { 0.0 } else { (dot(&ap, &d) / dd).clamp(0.0, 1.0) };
    let r: Vec<f64> = ap.iter().zip(&d).map(|(u, v)| u - t * v).collect();
    norm2(&r)
}

impl XSet {
    pub fn dist(&self, p: &[f64]) -> f64 {
        match self {
            XSet::Segment(a, b) => segment_dist(a, b, p),
            XSet::Hyperplane { normal, offset } => (dot(normal, p) - offset).abs() / norm2(normal),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductSet {
    pub x: XSet,
    /// Dual part, always a segment.
    pub y: (Vec<f64>, Vec<f64>),
}

impl ProductSet {
    /// Euclidean distance from `z` to the set.
    pub fn dist(&self, z: &PrimalDualPoint) -> f64 {
        self.x.dist(&z.x).hypot(segment_dist(&self.y.0, &self.y.1, &z.y))
    }

    /// Center and radius of a Euclidean ball containing the set, when bounded.
    pub fn bounding_ball(&self) -> Option<(PrimalDualPoint, f64)> {
        let XSet::Segment(a, b) = &self.x else { return None };
        let mid = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(p, q)| 0.5 * (p + q)).collect() };
        let cx = mid(a, b);
        let cy = mid(&self.y.0, &self.y.1);
        let rx = 0.5 * norm2(&a.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>());
        let ry = 0.5 * norm2(&self.y.0.iter().zip(&self.y.1).map(|(p, q)| p - q).collect::<Vec<_>>());
        Some((PrimalDualPoint::new(cx, cy), rx.hypot(ry)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnownSolution {
    /// The primal-dual solution set.
    pub set: ProductSet,
    /// Solutions of the system with the nonactive constraints dropped and their multipliers fixed at zero.
    pub reduced: ProductSet,
    /// A point in the relative interior of `set`.
    pub representative: PrimalDualPoint,
    /// Points where the ratio `dist(0, F(z))/dist(z, S*)` is known to be small.
    pub witnesses: Vec<PrimalDualPoint>,
}

#[derive(Clone, Debug)]
pub struct InstanceDescriptor {
    pub name: String,
    pub spec: ProblemSpec,
    pub known_solution: Option<KnownSolution>,
    /// Pinned stepsizes; algorithms not listed use the automatic rule.
    pub stepsizes: Vec<(Algorithm, f64)>,
    /// Default active-set tolerance for analysis.
    pub eps: f64,
    /// Strictly feasible point used by the generators.
    pub interior_point: Option<Vec<f64>>,
    pub notes: String,
}

impl InstanceDescriptor {
    pub fn recommended_stepsize(&self, alg: Algorithm) -> Option<f64> {
        self.stepsizes.iter().find(|(a, _)| *a == alg).map(|(_, e)| *e)
    }

    pub fn recommended_config(&self, alg: Algorithm) -> SolverConfig {
        let cfg = SolverConfig::new(alg);
        match self.recommended_stepsize(alg) {
            Some(eta) => cfg.with_stepsize(eta),
            None => cfg,
        }
    }
}

pub const BUILTINS: [(&str, &str); 3] = [
    ("intro-qp", "2-variable QP, 4 constraints, degenerate: constraint 2 is active with a zero multiplier"),
    ("rotated-house", "2-variable LP with a segment of primal solutions; parameter --c1 in (0, 1), default 0.6"),
    ("trivial-lp", "min x s.t. -x <= 0; unique solution (0, 1)"),
];

/// Resolves a `builtin:` name.
pub fn builtin(name: &str, c1: Option<f64>) -> Result<InstanceDescriptor> {
    match name {
        "intro-qp" => Ok(intro_qp()),
        "rotated-house" => rotated_house(c1.unwrap_or(0.6)),
        "trivial-lp" => Ok(trivial_lp()),
        _ => Err(InstanceError::UnknownBuiltin(name.to_string())),
    }
}

/// Two-variable QP whose solution has a weakly active constraint.
///
/// `Q = UDUᵀ` with `D = diag(1, 0)` and `U` the rotation by `π/64`, `c = (0, −1)`,
/// and four affine constraints parameterized by `ζ = 1/6`, `κ = 1/2`,
/// `δ = 2⁻¹⁰`. The unique primal solution is `x* = (−2δ, κ − δ)`; the duals
/// form a segment with `y₁ = 0` and `y₂ ∈ [0, u₁s]` where `u = Ue₁`, `s = ⟨u, x*⟩`.
pub fn intro_qp() -> InstanceDescriptor {
    let theta = PI / 64.0;
    let (sn, cs) = theta.sin_cos();
    let u = [cs, sn];
    let q = Matrix::from_rows(&[vec![u[0] * u[0], u[0] * u[1]], vec![u[1] * u[0], u[1] * u[1]]]).unwrap();
    let (zeta, kappa, dh) = (1.0 / 6.0, 0.5, 1.0 / 1024.0);
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 2.0], vec![0.0, 1.0], vec![-zeta, 1.0]]).unwrap();
    let b = [1.0, 1.0, kappa - dh, kappa - dh * (1.0 - zeta / kappa)];
    let spec = ProblemSpec::affine(vec![0.0, -1.0], Some(q), &a, &b).expect("valid data");

    let x_star = vec![-2.0 * dh, kappa - dh];
    let s = dot(&u, &x_star);
    let t_max = u[0] * s;
    let y_at = |t: f64| vec![0.0, t, 1.0 - u[1] * s - 6.0 * u[0] * s + 4.0 * t, 6.0 * (u[0] * s - t)];
    let set = ProductSet {
        x: XSet::Segment(x_star.clone(), x_star.clone()),
        y: (y_at(0.0), y_at(t_max)),
    };
    let na = op_norm(&a, solvers::OP_NORM_TOL).expect("nonzero");
    let nq = op_norm(spec.q().unwrap(), solvers::OP_NORM_TOL).expect("nonzero");
    InstanceDescriptor {
        name: "intro-qp".into(),
        known_solution: Some(KnownSolution {
            reduced: set.clone(),
            set,
            representative: PrimalDualPoint::new(x_star, y_at(0.5 * t_max)),
            witnesses: Vec::new(),
        }),
        spec,
        stepsizes: vec![
            (Algorithm::Pdhg, 0.99 / na),
            (Algorithm::Admm, 2.0 * 0.99 / na),
            (Algorithm::Egm, 0.99 / ((nq + na).powi(2) + na * na).sqrt()),
        ],
        eps: 1e-8,
        interior_point: None,
        notes: "weakly active constraint 2 (B_d = {2}); dual solutions form a segment".into(),
    }
}

/// `min ⟨c, x⟩ s.t. ⟨c, x⟩ ≥ ‖c‖₁, x ≥ 0` with `c = (c₁, √(1 − c₁²))`,
/// written as `Ax ≤ b` with `A = −[[c₁, c₂], [1, 0], [0, 1]]`, `b = −(‖c‖₁, 0, 0)`.
///
/// `S* = {x ≥ 0 : ⟨c, x⟩ = ‖c‖₁} × {(1, 0, 0)}`; dropping the two bound
/// constraints turns the primal part into the whole hyperplane.
pub fn rotated_house(c1: f64) -> Result<InstanceDescriptor> {
    if !(c1 > 0.0 && c1 < 1.0) {
        return Err(InstanceError::InvalidParameter(format!("c1 must lie in (0, 1), got {c1}")));
    }
    let c2 = (1.0 - c1 * c1).sqrt();
    let l1 = c1 + c2;
    let a = Matrix::from_rows(&[vec![-c1, -c2], vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
    let spec = ProblemSpec::affine(vec![c1, c2], None, &a, &[-l1, 0.0, 0.0])?;
    let y_star = vec![1.0, 0.0, 0.0];
    let ends = (vec![l1 / c1, 0.0], vec![0.0, l1 / c2]);
    let mid = vec![0.5 * l1 / c1, 0.5 * l1 / c2];
    let set = ProductSet {
        x: XSet::Segment(ends.0.clone(), ends.1.clone()),
        y: (y_star.clone(), y_star.clone()),
    };
    let reduced = ProductSet {
        x: XSet::Hyperplane {
            normal: vec![c1, c2],
            offset: l1,
        },
        y: (y_star.clone(), y_star.clone()),
    };
    // Beyond the end of the segment on the axis of the smaller cost
    // coefficient the ratio equals min{c₁, c₂}; along +c it equals 1/√(1+τ²).
    let eps = 0.1;
    let tip = if c1 <= c2 {
        vec![l1 / c1 + eps, 0.0]
    } else {
        vec![0.0, l1 / c2 + eps]
    };
    let witnesses = vec![
        PrimalDualPoint::new(tip, y_star.clone()),
        PrimalDualPoint::new(vec![mid[0] + 2.0 * c1, mid[1] + 2.0 * c2], vec![0.0; 3]),
    ];
    Ok(InstanceDescriptor {
        name: "rotated-house".into(),
        spec,
        known_solution: Some(KnownSolution {
            set,
            reduced,
            representative: PrimalDualPoint::new(mid, y_star),
            witnesses,
        }),
        stepsizes: Vec::new(),
        eps: 1e-10,
        interior_point: None,
        notes: format!("c = ({c1}, {c2}); primal solutions form a segment"),
    })
}

/// `min x s.t. −x ≤ 0`.
pub fn trivial_lp() -> InstanceDescriptor {
    let spec = ProblemSpec::affine(vec![1.0], None, &Matrix::from_rows(&[vec![-1.0]]).unwrap(), &[0.0]).unwrap();
    let set = ProductSet {
        x: XSet::Segment(vec![0.0], vec![0.0]),
        y: (vec![1.0], vec![1.0]),
    };
    InstanceDescriptor {
        name: "trivial-lp".into(),
        spec,
        known_solution: Some(KnownSolution {
            reduced: set.clone(),
            set,
            representative: PrimalDualPoint::new(vec![0.0], vec![1.0]),
            witnesses: Vec::new(),
        }),
        stepsizes: Vec::new(),
        eps: 1e-10,
        interior_point: None,
        notes: "one variable, one constraint".into(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn attempt_seed(seed: u64, attempt: usize) -> u64 {
    seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const POST_CHECK_DIM: usize = 20;
const POST_CHECK_ITERS: u64 = 100_000;
const POST_CHECK_TOL: f64 = 1e-6;
const MAX_ATTEMPTS: usize = 10;

/// Stepsizes the generators recommend: the automatic rule, except that EGM
/// on a QP uses `0.99/(‖Q‖ + ‖A‖)` so that `ηL < 1`.
fn generated_stepsizes(spec: &ProblemSpec) -> Result<Vec<(Algorithm, f64)>> {
    if let (Some(q), true) = (spec.q(), spec.is_affine()) {
        let l = op_norm(q, solvers::OP_NORM_TOL)? + op_norm(spec.linear_rows(), solvers::OP_NORM_TOL)?;
        return Ok(vec![(Algorithm::Egm, 0.99 / l)]);
    }
    Ok(Vec::new())
}

fn post_check(d: &InstanceDescriptor) -> std::result::Result<(), String> {
    if d.spec.n() > POST_CHECK_DIM || d.spec.m() > POST_CHECK_DIM {
        return Ok(());
    }
    for alg in Algorithm::ALL {
        if !alg.supports(d.spec.class()) {
            continue;
        }
        let cfg = d
            .recommended_config(alg)
            .with_max_iters(POST_CHECK_ITERS)
            .with_kkt_tol(POST_CHECK_TOL);
        match solvers::run(&d.spec, &cfg) {
            Ok(t) if t.status == Status::Converged => {}
            Ok(t) => return Err(format!("{alg} stopped at kkt {:.3e}", t.final_kkt())),
            Err(e) => return Err(format!("{alg}: {e}")),
        }
    }
    Ok(())
}

fn generate<F>(seed: u64, name: &str, mut build: F) -> Result<InstanceDescriptor>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<(ProblemSpec, Vec<f64>)>,
{
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed(seed, attempt));
        let (spec, x0) = build(&mut rng)?;
        let d = InstanceDescriptor {
            name: format!("{name}(seed={seed})"),
            stepsizes: generated_stepsizes(&spec)?,
            spec,
            known_solution: None,
            eps: 1e-10,
            interior_point: Some(x0),
            notes: format!("generated, attempt {attempt}"),
        };
        match post_check(&d) {
            Ok(()) => return Ok(d),
            Err(e) => {
                log::debug!("{name} seed {seed} attempt {attempt} rejected: {e}");
                last = e;
            }
        }
    }
    Err(InstanceError::PostCheck {
        attempts: MAX_ATTEMPTS,
        last,
    })
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(InstanceError::InvalidParameter(format!("need n, m ≥ 1, got n = {n}, m = {m}")));
    }
    Ok(())
}

/// Right-hand side making `x0` strictly feasible with margins in `[0.1, 1]`.
fn feasible_rhs(rng: &mut ChaCha8Rng, ax0: &[f64]) -> Vec<f64> {
    ax0.iter().map(|v| v + rng.gen_range(0.1..=1.0)).collect()
}

/// Multipliers with random support, so both degenerate and nondegenerate
/// solutions occur.
fn cone_weights(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..m).map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.1..2.0) } else { 0.0 }).collect();
    if w.iter().all(|v| *v == 0.0) {
        w[0] = 1.0;
    }
    w
}

/// Sparse LP `min ⟨c, x⟩ s.t. Ax ≤ b`, bounded below because `c = −Aᵀw`
/// with `w ≥ 0`, and with a strictly feasible `x₀`.
pub fn random_lp(seed: u64, n: usize, m: usize, density: f64) -> Result<InstanceDescriptor> {
    check_dims(n, m)?;
    if !(density > 0.0 && density <= 1.0) {
        return Err(InstanceError::InvalidParameter(format!("density must lie in (0, 1], got {density}")));
    }
    generate(seed, "random-lp", |rng| {
        let mut trip = Vec::new();
        for i in 0..m {
            let forced = rng.gen_range(0..n);
            for j in 0..n {
                if j == forced || rng.gen_bool(density) {
                    trip.push((i, j, gaussian(rng)));
                }
            }
        }
        let a = Matrix::from_triplets(m, n, &trip).expect("valid triplets");
        let x0: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        let b = feasible_rhs(rng, &a.mul_vec(&x0));
        let w = cone_weights(rng, m);
        let c: Vec<f64> = a.mul_vec_t(&w).iter().map(|v| -v).collect();
        Ok((ProblemSpec::affine(c, None, &a, &b)?, x0))
    })
}

fn orthonormal_columns(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| gaussian(rng));
    g.qr().q()
}

fn low_rank_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Matrix {
    let v = orthonormal_columns(rng, n, rank);
    let lam: Vec<f64> = (0..rank).map(|_| rng.gen_range(0.5..=2.0)).collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..rank).map(|r| lam[r] * v[(i, r)] * v[(j, r)]).sum();
            data[i * n + j] = s;
            data[j * n + i] = s;
        }
    }
    Matrix::from_row_slice(n, n, &data).unwrap()
}

/// Dense QP with `Q` of the given rank (eigenvalues in `[0.5, 2]`) and
/// `c = −Aᵀw + Qr`, which keeps the objective bounded below on the feasible set.
pub fn random_qp(seed: u64, n: usize, m: usize, rank: usize) -> Result<InstanceDescriptor> {
    check_dims(n, m)?;
    if rank == 0 || rank > n {
        return Err(InstanceError::InvalidParameter(format!("rank must lie in 1..={n}, got {rank}")));
    }
    generate(seed, "random-qp", |rng| {
        let data: Vec<f64> = (0..m * n).map(|_| gaussian(rng)).collect();
        let a = Matrix::from_row_slice(m, n, &data).unwrap();
        let q = low_rank_psd(rng, n, rank);
        let x0: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        let b = feasible_rhs(rng, &a.mul_vec(&x0));
        let w = cone_weights(rng, m);
        let r: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        let qr = q.mul_vec(&r);
        let c: Vec<f64> = a.mul_vec_t(&w).iter().zip(&qr).map(|(u, v)| -u + v).collect();
        Ok((ProblemSpec::affine(c, Some(q), &a, &b)?, x0))
    })
}

/// QCQP whose first constraint has a positive definite Hessian, so the
/// feasible set is compact; remaining constraints alternate between affine
/// and low-rank quadratic.
pub fn random_qcqp(seed: u64, n: usize, m: usize) -> Result<InstanceDescriptor> {
    check_dims(n, m)?;
    generate(seed, "random-qcqp", |rng| {
        let x0: Vec<f64> = (0..n).map(|_| 0.5 * gaussian(rng)).collect();
        let mut cons = Vec::with_capacity(m);
        for j in 0..m {
            let lin: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
            let margin = rng.gen_range(0.1..=1.0);
            let con = if j == 0 || j % 2 == 0 {
                let q = if j == 0 {
                    low_rank_psd(rng, n, n)
                } else {
                    let rank = rng.gen_range(1..=n);
                    low_rank_psd(rng, n, rank)
                };
                let val = dot(&lin, &x0) + 0.5 * dot(&x0, &q.mul_vec(&x0));
                Constraint::Quadratic { c: lin, q, b: val + margin }
            } else {
                let val = dot(&lin, &x0);
                Constraint::Affine { a: lin, b: val + margin }
            };
            cons.push(con);
        }
        let c: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        let rank = rng.gen_range(1..=n);
        let q = low_rank_psd(rng, n, rank);
        Ok((ProblemSpec::new(c, Some(q), cons)?, x0))
    })
}

/// LP with a unique, strictly complementary solution: `n` active
/// constraints with multipliers in `[0.5, 1.5]`, the rest slack by at least 0.5.
pub fn strictly_complementary_lp(seed: u64, n: usize, m: usize) -> Result<InstanceDescriptor> {
    if n == 0 || m < n {
        return Err(InstanceError::InvalidParameter(format!("need 1 ≤ n ≤ m, got n = {n}, m = {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..m * n).map(|_| gaussian(&mut rng)).collect();
    let a = Matrix::from_row_slice(m, n, &data).unwrap();
    let x_star: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
    let ax = a.mul_vec(&x_star);
    let mut b = ax.clone();
    let mut y_star = vec![0.0; m];
    for j in 0..m {
        if j < n {
            y_star[j] = rng.gen_range(0.5..=1.5);
        } else {
            b[j] += rng.gen_range(0.5..=1.5);
        }
    }
    let c: Vec<f64> = a.mul_vec_t(&y_star).iter().map(|v| -v).collect();
    let spec = ProblemSpec::affine(c, None, &a, &b)?;
    let set = ProductSet {
        x: XSet::Segment(x_star.clone(), x_star.clone()),
        y: (y_star.clone(), y_star.clone()),
    };
    Ok(InstanceDescriptor {
        name: format!("strict-lp(seed={seed})"),
        spec,
        known_solution: Some(KnownSolution {
            reduced: set.clone(),
            set,
            representative: PrimalDualPoint::new(x_star, y_star),
            witnesses: Vec::new(),
        }),
        stepsizes: Vec::new(),
        eps: 1e-10,
        interior_point: None,
        notes: "unique solution with strict complementarity".into(),
    })
}

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

fn upper_triplets(q: &Matrix) -> Vec<(usize, usize, f64)> {
    q.triplets().into_iter().filter(|(i, j, _)| i <= j).collect()
}

/// Serializes a problem. Symmetric matrices are written as their upper triangle.
pub fn problem_to_text(p: &ProblemSpec) -> String {
    let mut w = format::Writer::new(PROBLEM_HEADER);
    w.kv("n", p.n()).kv("m", p.m()).reals("objective.c", p.c());
    if let Some(q) = p.q() {
        w.kv("objective.Q", format::fmt_triplets(&upper_triplets(q)));
    }
    for (k, con) in p.constraints().iter().enumerate() {
        match con {
            Constraint::Affine { a, b } => {
                w.kv(&format!("constraints[{k}].kind"), "affine")
                    .reals(&format!("constraints[{k}].a"), a)
                    .real(&format!("constraints[{k}].b"), *b);
            }
            Constraint::Quadratic { c, q, b } => {
                w.kv(&format!("constraints[{k}].kind"), "quadratic")
                    .reals(&format!("constraints[{k}].c"), c)
                    .kv(&format!("constraints[{k}].Q"), format::fmt_triplets(&upper_triplets(q)))
                    .real(&format!("constraints[{k}].b"), *b);
            }
        }
    }
    w.finish()
}

fn symmetric_from_upper(entry: &format::Entry, n: usize) -> std::result::Result<Matrix, FormatError> {
    let err = |msg: String| FormatError::Parse {
        line: entry.line,
        col: entry.col,
        msg,
    };
    let mut full = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, j, v) in entry.triplets()? {
        if i >= n || j >= n {
            return Err(err(format!("entry ({i}, {j}) out of bounds for n = {n}")));
        }
        if i > j {
            return Err(err(format!("entry ({i}, {j}) below the diagonal; give the upper triangle only")));
        }
        if !seen.insert((i, j)) {
            return Err(err(format!("duplicate entry ({i}, {j})")));
        }
        full.push((i, j, v));
        if i != j {
            full.push((j, i, v));
        }
    }
    Ok(Matrix::from_triplets(n, n, &full).expect("checked bounds and duplicates"))
}

fn parse_constraint_key(key: &str) -> Option<(usize, &str)> {
    let rest = key.strip_prefix("constraints[")?;
    let close = rest.find(']')?;
    let k = rest[..close].parse().ok()?;
    let field = rest[close + 1..].strip_prefix('.')?;
    Some((k, field))
}

pub fn problem_from_text(text: &str) -> Result<ProblemSpec> {
    let doc = Document::parse(text)?;
    doc.expect_header(PROBLEM_HEADER)?;
    let n_entry = doc.require("n")?;
    let n = n_entry.usize()?;
    let m_entry = doc.require("m")?;
    let m = m_entry.usize()?;
    let perr = |e: &format::Entry, msg: String| {
        InstanceError::Format(FormatError::Parse {
            line: e.line,
            col: e.col,
            msg,
        })
    };
    for e in doc.entries() {
        match e.key.as_str() {
            "n" | "m" | "objective.c" | "objective.Q" => {}
            key => match parse_constraint_key(key) {
                Some((k, "kind" | "a" | "c" | "Q" | "b")) => {
                    if k >= m {
                        return Err(perr(e, format!("constraint index {k} out of range for m = {m}")));
                    }
                }
                _ => return Err(perr(e, format!("unknown key `{key}`"))),
            },
        }
    }
    let c_entry = doc.require("objective.c")?;
    let c = c_entry.reals()?;
    if c.len() != n {
        return Err(perr(c_entry, format!("objective.c has {} entries, expected n = {n}", c.len())));
    }
    let q = doc.get("objective.Q").map(|e| symmetric_from_upper(e, n)).transpose()?;
    let mut cons = Vec::with_capacity(m);
    for k in 0..m {
        let kind = doc.require(&format!("constraints[{k}].kind"))?;
        let b = doc.require(&format!("constraints[{k}].b"))?.real()?;
        let vec_of = |field: &str| -> Result<Vec<f64>> {
            let e = doc.require(&format!("constraints[{k}].{field}"))?;
            let v = e.reals()?;
            if v.len() != n {
                return Err(perr(e, format!("expected {n} entries, found {}", v.len())));
            }
            Ok(v)
        };
        let con = match kind.text() {
            "affine" => {
                if let Some(e) = doc.get(&format!("constraints[{k}].Q")).or(doc.get(&format!("constraints[{k}].c"))) {
                    return Err(perr(e, "affine constraint takes fields a and b only".into()));
                }
                Constraint::Affine { a: vec_of("a")?, b }
            }
            "quadratic" => {
                if let Some(e) = doc.get(&format!("constraints[{k}].a")) {
                    return Err(perr(e, "quadratic constraint takes fields c, Q and b".into()));
                }
                let qe = doc.require(&format!("constraints[{k}].Q"))?;
                Constraint::Quadratic {
                    c: vec_of("c")?,
                    q: symmetric_from_upper(qe, n)?,
                    b,
                }
            }
            other => return Err(perr(kind, format!("unknown constraint kind `{other}`"))),
        };
        cons.push(con);
    }
    Ok(ProblemSpec::new(c, q, cons)?)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| InstanceError::File {
        path: path.display().to_string(),
        source: e.into(),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| InstanceError::File {
        path: path.display().to_string(),
        source: e.into(),
    })
}

pub fn load(path: &Path) -> Result<ProblemSpec> {
    problem_from_text(&read(path)?).map_err(|e| match e {
        InstanceError::Format(source) => InstanceError::File {
            path: path.display().to_string(),
            source,
        },
        e => e,
    })
}

pub fn save(p: &ProblemSpec, path: &Path) -> Result<()> {
    write(path, &problem_to_text(p))
}

pub fn point_to_text(z: &PrimalDualPoint) -> String {
    format::Writer::new(POINT_HEADER).reals("x", &z.x).reals("y", &z.y).finish()
}

pub fn point_from_text(text: &str) -> Result<PrimalDualPoint> {
    let doc = Document::parse(text)?;
    doc.expect_header(POINT_HEADER)?;
    Ok(PrimalDualPoint::new(doc.require("x")?.reals()?, doc.require("y")?.reals()?))
}

pub fn load_point(path: &Path) -> Result<PrimalDualPoint> {
    point_from_text(&read(path)?)
}

pub fn save_point(z: &PrimalDualPoint, path: &Path) -> Result<()> {
    write(path, &point_to_text(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DUAL_RANGE_TOL;
    use approx::assert_relative_eq;

    #[test]
    fn intro_qp_data() {
        let d = intro_qp();
        let q = d.spec.q().unwrap();
        let ev = q.symmetric_eigenvalues();
        assert!(ev[0].abs() < 1e-15);
        assert_relative_eq!(ev[1], 1.0, epsilon = 1e-15);
        let row4 = d.spec.linear_rows().row(3);
        assert_eq!(row4, vec![-1.0 / 6.0, 1.0]);
        assert_eq!(d.spec.b()[2], 0.5 - 1.0 / 1024.0);
    }

    #[test]
    fn intro_qp_op_norm_matches_gram_eigenvalue() {
        // AᵀA = [[1 + 1 + 1/36, 2 − 2 − 1/6], [·, 4 + 4 + 1 + 1]]
        let (p, r, s): (f64, f64, f64) = (2.0 + 1.0 / 36.0, -1.0 / 6.0, 10.0);
        let lam = 0.5 * (p + s) + ((0.5 * (p - s)).powi(2) + r * r).sqrt();
        let a = intro_qp().spec.linear_rows().clone();
        assert_relative_eq!(op_norm(&a, 1e-12).unwrap(), lam.sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn intro_qp_known_solution() {
        let d = intro_qp();
        let ks = d.known_solution.unwrap();
        let g = d.spec.eval_g(&ks.representative.x);
        assert_relative_eq!(g[0], -4.0 / 1024.0, epsilon = 1e-15);
        for v in &g[1..] {
            assert!(v.abs() < 1e-15);
        }
        for y in [&ks.set.y.0, &ks.set.y.1, &ks.representative.y] {
            let z = PrimalDualPoint::new(ks.representative.x.clone(), y.clone());
            assert!(d.spec.kkt_residual(&z, DUAL_RANGE_TOL) <= 1e-12);
        }
        let y0 = &ks.set.y.0;
        assert!((y0[2] - 0.863).abs() < 1e-3 && (y0[3] - 0.135).abs() < 1e-3);
    }

    #[test]
    fn rotated_house_data() {
        let d = rotated_house(0.6).unwrap();
        assert_relative_eq!(d.spec.c()[1], 0.8, epsilon = 1e-15);
        assert_relative_eq!(-d.spec.b()[0], 1.4, epsilon = 1e-15);
        let ks = d.known_solution.unwrap();
        assert_eq!(ks.representative.y, vec![1.0, 0.0, 0.0]);
        assert!(d.spec.kkt_residual(&ks.representative, DUAL_RANGE_TOL) <= 1e-12);
        assert!(ks.set.dist(&ks.representative) == 0.0);
        assert!(rotated_house(1.0).is_err());
        assert!(rotated_house(0.0).is_err());
    }

    #[test]
    fn builtins_known_solutions_are_kkt_points() {
        for (name, _) in BUILTINS {
            let d = builtin(name, None).unwrap();
            let ks = d.known_solution.unwrap();
            assert!(d.spec.kkt_residual(&ks.representative, DUAL_RANGE_TOL) <= 1e-12, "{name}");
        }
        assert!(builtin("nope", None).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = random_lp(3, 5, 7, 0.5).unwrap();
        let b = random_lp(3, 5, 7, 0.5).unwrap();
        assert_eq!(a.spec, b.spec);
        assert_eq!(problem_to_text(&a.spec), problem_to_text(&b.spec));
        assert_ne!(random_lp(4, 5, 7, 0.5).unwrap().spec, a.spec);
    }

    #[test]
    fn generated_instances_have_margin() {
        for seed in 0..5 {
            for d in [random_lp(seed, 6, 8, 0.4).unwrap(), random_qp(seed, 4, 5, 2).unwrap(), random_qcqp(seed, 3, 4).unwrap()] {
                let x0 = d.interior_point.as_ref().unwrap();
                for g in d.spec.eval_g(x0) {
                    assert!(g <= -0.1 + 1e-12, "{g} in {}", d.name);
                }
            }
        }
    }

    #[test]
    fn generated_qp_rank() {
        for (n, rank) in [(5, 2), (8, 3), (4, 4)] {
            let d = random_qp(n as u64, n, 3, rank).unwrap();
            let ev = d.spec.q().unwrap().symmetric_eigenvalues();
            let nonzero = ev.iter().filter(|v| v.abs() > 1e-8).count();
            assert_eq!(nonzero, rank);
        }
    }

    #[test]
    fn generated_qcqp_is_qcqp() {
        let d = random_qcqp(1, 3, 3).unwrap();
        assert_eq!(d.spec.class(), crate::problem::ProblemClass::Qcqp);
    }

    #[test]
    fn problem_file_round_trip() {
        for spec in [
            intro_qp().spec,
            rotated_house(0.6).unwrap().spec,
            random_qcqp(2, 3, 3).unwrap().spec,
            random_lp(1, 4, 5, 0.3).unwrap().spec,
        ] {
            let text = problem_to_text(&spec);
            let back = problem_from_text(&text).unwrap();
            assert_eq!(back, spec);
            assert_eq!(problem_to_text(&back), text);
        }
    }

    #[test]
    fn problem_file_errors() {
        let good = problem_to_text(&trivial_lp().spec);
        let bad_m = good.replace("m: 1", "m: 2");
        assert!(matches!(problem_from_text(&bad_m), Err(InstanceError::Format(_))));
        let fewer = good.replace("m: 1", "m: 0");
        match problem_from_text(&fewer) {
            Err(InstanceError::Format(FormatError::Parse { line, .. })) => assert!(line > 1),
            other => panic!("{other:?}"),
        }
        let non_psd = "saddlekit-problem v1\nn: 2\nm: 0\nobjective.c: [0, 0]\nobjective.Q: [(0, 0, 1), (0, 1, 2), (1, 1, 1)]\n";
        match problem_from_text(non_psd) {
            Err(InstanceError::Problem(ProblemError::NotPsd { min_eig, .. })) => assert_relative_eq!(min_eig, -1.0, epsilon = 1e-12),
            other => panic!("{other:?}"),
        }
        let lower = "saddlekit-problem v1\nn: 2\nm: 0\nobjective.c: [0, 0]\nobjective.Q: [(1, 0, 1)]\n";
        assert!(problem_from_text(lower).is_err());
    }

    #[test]
    fn point_round_trip() {
        let z = PrimalDualPoint::new(vec![0.1, -1e-300], vec![3.0]);
        assert_eq!(point_from_text(&point_to_text(&z)).unwrap(), z);
    }

    #[test]
    fn strictly_complementary_lp_is_solved_by_construction() {
        let d = strictly_complementary_lp(5, 3, 6).unwrap();
        let ks = d.known_solution.unwrap();
        assert!(d.spec.kkt_residual(&ks.representative, DUAL_RANGE_TOL) <= 1e-12);
    }
}
