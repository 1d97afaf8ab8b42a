//! Active-set identification diagnostics: index-set partitions, membership
//! in the identifiable set, the identification iteration `k*`, the radius of
//! active-set stability `δ`, sampled metric-subregularity moduli and
//! two-stage rate fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::format;
use crate::instances::KnownSolution;
use crate::linalg::{dot, norm2, op_norm, LinalgError, PKind, PSeminorm, SpdFactor};
use crate::problem::{Constraint, PrimalDualPoint, ProblemError, ProblemSpec};
use crate::solvers::{self, ActiveSnapshot, IterationTrace, SolverConfig, SolverError, Status};

pub const REPORT_HEADER: &str = "saddlekit-report v1";

/// Minimum number of recorded points after `k*` required by [`fit_two_stage`].
pub const MIN_POST_POINTS: usize = 20;

/// Largest fraction of rejected draws tolerated by the samplers.
pub const MAX_REJECTION: f64 = 0.999;

/// Slack allowed in the ordering check `α_M ≥ α_L ≥ α_G`.
pub const ORDERING_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("zero margin at constraint {index} ({branch}): the partition is not strict")]
    ZeroMargin { index: usize, branch: Branch },
    #[error("no usable samples for {0}: the sampling region is degenerate")]
    EmptyEstimate(&'static str),
    #[error("sampling region for {modulus} too thin: {rejected} of {draws} draws rejected")]
    RegionTooThin {
        modulus: &'static str,
        rejected: usize,
        draws: usize,
    },
    #[error("need at least {needed} recorded points after k*, found {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, IdentError>;

// ---------------------------------------------------------------------------
// partitions and the identifiable set
// ---------------------------------------------------------------------------

/// Index sets at a (near-)solution, 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSetPartition {
    /// `g_j < −ε` and `|y_j| < ε`
    pub nonactive: Vec<usize>,
    /// `y_j > ε`
    pub strongly_active: Vec<usize>,
    /// `|g_j| < ε` and `|y_j| < ε`
    pub degenerate: Vec<usize>,
    /// Indices that fit none of the above.
    pub unclassified: Vec<usize>,
    pub eps: f64,
}

impl ActiveSetPartition {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate.is_empty()
    }
}

pub fn classify(p: &ProblemSpec, z_star: &PrimalDualPoint, eps: f64) -> Result<ActiveSetPartition> {
    if !(eps > 0.0) {
        return Err(IdentError::InvalidTolerance(eps));
    }
    p.validate_point(z_star)?;
    let g = p.eval_g(&z_star.x);
    let mut part = ActiveSetPartition {
        nonactive: Vec::new(),
        strongly_active: Vec::new(),
        degenerate: Vec::new(),
        unclassified: Vec::new(),
        eps,
    };
    for (j, (gj, yj)) in g.iter().zip(&z_star.y).enumerate() {
        if *yj > eps {
            part.strongly_active.push(j);
        } else if yj.abs() < eps && *gj < -eps {
            part.nonactive.push(j);
        } else if yj.abs() < eps && gj.abs() < eps {
            part.degenerate.push(j);
        } else {
            part.unclassified.push(j);
        }
    }
    Ok(part)
}

/// Membership in the `ε`-identifiable set.
pub fn membership_m(p: &ProblemSpec, partition: &ActiveSetPartition, z: &PrimalDualPoint, eps: f64) -> bool {
    if z.y.iter().any(|v| *v < 0.0) {
        return false;
    }
    let g = p.eval_g(&z.x);
    partition.nonactive.iter().all(|&j| g[j] < -eps && z.y[j].abs() < eps)
        && partition.strongly_active.iter().all(|&j| z.y[j] > eps)
}

/// Membership decided from a snapshot taken at the partition's tolerance.
pub fn snapshot_in_m(s: &ActiveSnapshot, partition: &ActiveSetPartition) -> bool {
    s.dual_feasible
        && partition
            .nonactive
            .iter()
            .all(|&j| s.primal_slack.contains(j) && s.dual_small.contains(j))
        && partition.strongly_active.iter().all(|&j| s.dual_pos.contains(j))
}

/// Smallest recorded iteration after which every recorded iterate lies in
/// `M^ε`; resolution is the trace's recording cadence.
pub fn identification_iteration(
    trace: &IterationTrace,
    p: &ProblemSpec,
    partition: &ActiveSetPartition,
    eps: f64,
) -> Option<u64> {
    let use_snapshots = trace.snapshot_eps == eps && eps == partition.eps;
    let inside: Vec<bool> = if use_snapshots {
        trace.records.iter().map(|r| snapshot_in_m(&r.snapshot, partition)).collect()
    } else {
        trace.points.iter().map(|z| membership_m(p, partition, z, eps)).collect()
    };
    let iters: Vec<u64> = trace.records.iter().map(|r| r.iter).collect();
    identification_from_flags(&iters, &inside)
}

/// `k*` from per-record membership flags.
pub fn identification_from_flags(iters: &[u64], inside: &[bool]) -> Option<u64> {
    if !*inside.last()? {
        return None;
    }
    let first_in_tail = inside.iter().rposition(|b| !b).map_or(0, |i| i + 1);
    Some(iters[first_in_tail])
}

// ---------------------------------------------------------------------------
// radius of active-set stability
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// `−g_j(x*)/L^x_j`, `j ∈ N`
    Primal,
    /// `y*_j/L^y_j`, `j ∈ B_a`
    Dual,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::Primal => "primal",
            Branch::Dual => "dual",
        })
    }
}

/// One term `margin / (slope + growth·t)` of the modulus map `Δ(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusTerm {
    pub index: usize,
    pub branch: Branch,
    pub margin: f64,
    pub slope: f64,
    pub growth: f64,
}

impl RadiusTerm {
    pub fn modulus(&self, t: f64) -> f64 {
        self.slope + self.growth * t
    }

    pub fn ratio(&self, t: f64) -> f64 {
        self.margin / self.modulus(t)
    }
}

/// `Δ(t) = min_j margin_j / L_j(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiusModel {
    pub terms: Vec<RadiusTerm>,
}

impl RadiusModel {
    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|term| term.ratio(t)).fold(f64::INFINITY, f64::min)
    }

    fn argmin(&self, t: f64) -> Option<&RadiusTerm> {
        self.terms
            .iter()
            .min_by(|a, b| a.ratio(t).partial_cmp(&b.ratio(t)).unwrap().then(a.index.cmp(&b.index)))
    }

    /// The unique fixed point of `Δ`, by bisection on `t − Δ(t)` over `[0, Δ(0)]`.
    pub fn fixed_point(&self) -> f64 {
        let d0 = self.eval(0.0);
        if !d0.is_finite() || self.terms.iter().all(|t| t.growth == 0.0) {
            return d0;
        }
        let (mut lo, mut hi) = (0.0, d0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - self.eval(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRadius {
    /// `+∞` when `N ∪ B_a` is empty.
    pub delta: f64,
    pub binding: Option<(usize, Branch)>,
    /// `(index, branch, L_j(δ))` for every term.
    pub moduli_used: Vec<(usize, Branch, f64)>,
    pub model: RadiusModel,
}

/// Dual-norm helper: `√(vᵀP⁻¹v)` for positive definite `P`, or the
/// `‖v‖/√λ⁺_min` bound otherwise.
struct DualNorm {
    factor: Option<SpdFactor>,
    inv_sqrt_lmin: f64,
    n: usize,
    m: usize,
}

impl DualNorm {
    fn new(p: &PSeminorm) -> Result<Self> {
        let (n, m) = p.dims();
        let ext = p.eigen_extremes()?;
        let factor = match p.kind() {
            PKind::ScaledIdentity => None,
            PKind::Pdhg(_) if ext.lambda_min > 0.0 => Some(SpdFactor::new(&p.dense())),
            PKind::Pdhg(_) => {
                return Err(IdentError::InvalidArgument(
                    "PDHG metric is not positive definite at this stepsize".into(),
                ))
            }
            PKind::Admm(_) => None,
        };
        Ok(DualNorm {
            factor,
            inv_sqrt_lmin: 1.0 / ext.lambda_min_plus.sqrt(),
            n,
            m,
        })
    }

    /// Norm of the functional `(vx, vy)`.
    fn of(&self, vx: &[f64], vy: &[f64]) -> f64 {
        match &self.factor {
            Some(f) => {
                let mut v = vx.to_vec();
                v.extend_from_slice(vy);
                let w = f.solve(&v, f64::INFINITY).expect("positive definite");
                dot(&v, &w).max(0.0).sqrt()
            }
            None => (dot(vx, vx) + dot(vy, vy)).sqrt() * self.inv_sqrt_lmin,
        }
    }

    fn primal(&self, a: &[f64]) -> f64 {
        self.of(a, &vec![0.0; self.m])
    }

    fn dual(&self, j: usize) -> f64 {
        let mut e = vec![0.0; self.m];
        e[j] = 1.0;
        self.of(&vec![0.0; self.n], &e)
    }
}

/// Builds `Δ(t)` for the given partition and metric.
///
/// Affine rows use the exact dual norm of `(a_j, 0)` (a constant modulus).
/// Quadratic rows use `L(t) = (‖c_j + Q_j x*‖ + ‖Q_j‖t/√λ⁺_min)/√λ⁺_min`.
/// For a singular `P` all moduli use the `1/√λ⁺_min` bound.
pub fn radius_model(
    p: &ProblemSpec,
    z_star: &PrimalDualPoint,
    partition: &ActiveSetPartition,
    metric: &PSeminorm,
) -> Result<RadiusModel> {
    p.validate_point(z_star)?;
    let g = p.eval_g(&z_star.x);
    let dn = DualNorm::new(metric)?;
    let inv = 1.0 / metric.eigen_extremes()?.lambda_min_plus.sqrt();
    let mut terms = Vec::new();
    for &j in &partition.nonactive {
        let margin = -g[j];
        if !(margin > 0.0) {
            return Err(IdentError::ZeroMargin { index: j, branch: Branch::Primal });
        }
        let con = &p.constraints()[j];
        let (slope, growth) = match con {
            Constraint::Affine { a, .. } => (dn.primal(a), 0.0),
            Constraint::Quadratic { q, .. } => {
                let grad = con.gradient(&z_star.x);
                let qn = if q.is_zero() { 0.0 } else { op_norm(q, 1e-12)? };
                (norm2(&grad) * inv, qn * inv * inv)
            }
        };
        terms.push(RadiusTerm {
            index: j,
            branch: Branch::Primal,
            margin,
            slope,
            growth,
        });
    }
    for &j in &partition.strongly_active {
        let margin = z_star.y[j];
        if !(margin > 0.0) {
            return Err(IdentError::ZeroMargin { index: j, branch: Branch::Dual });
        }
        terms.push(RadiusTerm {
            index: j,
            branch: Branch::Dual,
            margin,
            slope: dn.dual(j),
            growth: 0.0,
        });
    }
    Ok(RadiusModel { terms })
}

pub fn stability_radius(
    p: &ProblemSpec,
    z_star: &PrimalDualPoint,
    partition: &ActiveSetPartition,
    metric: &PSeminorm,
) -> Result<StabilityRadius> {
    let model = radius_model(p, z_star, partition, metric)?;
    let delta = model.fixed_point();
    let binding = model.argmin(delta).map(|t| (t.index, t.branch));
    let moduli_used = model.terms.iter().map(|t| (t.index, t.branch, t.modulus(delta))).collect();
    Ok(StabilityRadius {
        delta,
        binding,
        moduli_used,
        model,
    })
}

// ---------------------------------------------------------------------------
// metric subregularity moduli
// ---------------------------------------------------------------------------

/// Distances to the solution set and its reduced counterpart.
pub trait SolutionOracle: Sync {
    /// `dist₂(z, S*)`
    fn dist_s(&self, z: &PrimalDualPoint) -> f64;
    /// `dist₂(z, S*_L)`, when the reduced solution set is known.
    fn dist_l(&self, z: &PrimalDualPoint) -> Option<f64>;
    /// Ball containing `S*`.
    fn bounding_ball(&self) -> (PrimalDualPoint, f64);
    /// A solution in the relative interior of `S*`.
    fn reference(&self) -> PrimalDualPoint;
    /// Points always included among the samples.
    fn witnesses(&self) -> Vec<PrimalDualPoint>;
}

/// Exact oracle for instances with a closed-form solution set.
pub struct ExactOracle<'a>(pub &'a KnownSolution);

impl SolutionOracle for ExactOracle<'_> {
    fn dist_s(&self, z: &PrimalDualPoint) -> f64 {
        self.0.set.dist(z)
    }

    fn dist_l(&self, z: &PrimalDualPoint) -> Option<f64> {
        Some(self.0.reduced.dist(z))
    }

    fn bounding_ball(&self) -> (PrimalDualPoint, f64) {
        self.0.set.bounding_ball().expect("solution sets of built-ins are bounded")
    }

    fn reference(&self) -> PrimalDualPoint {
        self.0.representative.clone()
    }

    fn witnesses(&self) -> Vec<PrimalDualPoint> {
        self.0.witnesses.clone()
    }
}

/// Treats a single high-accuracy solution as `S*`; the reduced set is unknown.
pub struct ReferencePointOracle {
    pub point: PrimalDualPoint,
}

impl ReferencePointOracle {
    /// Solves again with a tolerance ten times tighter than `cfg.kkt_tol`.
    pub fn from_aux_solve(p: &ProblemSpec, cfg: &SolverConfig) -> Result<Self> {
        let aux = cfg.clone().with_kkt_tol(cfg.kkt_tol / 10.0);
        let t = solvers::run(p, &aux)?;
        if t.status != Status::Converged {
            return Err(IdentError::InvalidArgument(format!(
                "auxiliary solve stopped at kkt {:.3e} without reaching {:.1e}",
                t.final_kkt(),
                aux.kkt_tol
            )));
        }
        Ok(ReferencePointOracle { point: t.final_point })
    }
}

impl SolutionOracle for ReferencePointOracle {
    fn dist_s(&self, z: &PrimalDualPoint) -> f64 {
        z.dist2(&self.point)
    }

    fn dist_l(&self, _z: &PrimalDualPoint) -> Option<f64> {
        None
    }

    fn bounding_ball(&self) -> (PrimalDualPoint, f64) {
        (self.point.clone(), 0.0)
    }

    fn reference(&self) -> PrimalDualPoint {
        self.point.clone()
    }

    fn witnesses(&self) -> Vec<PrimalDualPoint> {
        Vec::new()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    /// Minimum sampled ratio: an upper bound on the infimum.
    pub value: f64,
    pub argmin: PrimalDualPoint,
    /// Accepted samples (witnesses included).
    pub num_samples: usize,
    /// Total draws, accepted or not.
    pub num_draws: usize,
    pub region: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuliEstimate {
    pub alpha_g: Estimate,
    pub alpha_l: Option<Estimate>,
    pub alpha_m: Option<Estimate>,
    pub tau: f64,
    pub delta: f64,
    /// `λ_max(P)/λ⁺_min(P)`
    pub kappa_p: f64,
    pub lambda_max_p: f64,
    /// `α_M ≥ α_L ≥ α_G` up to [`ORDERING_SLACK`]; `None` if some estimate is missing.
    pub ordering_consistent: Option<bool>,
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let nv = norm2(&v);
    let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
    v.iter().map(|t| t * r / nv).collect()
}

/// Minimum of `num(z)/den(z)` over `points`; ratios with `den = 0` are skipped.
fn min_ratio<F, G>(points: &[PrimalDualPoint], num: F, den: G) -> Option<(f64, usize)>
where
    F: Fn(&PrimalDualPoint) -> f64 + Sync,
    G: Fn(&PrimalDualPoint) -> f64 + Sync,
{
    points
        .par_iter()
        .enumerate()
        .filter_map(|(i, z)| {
            let d = den(z);
            if d > 0.0 {
                Some((num(z) / d, i))
            } else {
                None
            }
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)))
}

/// Draws until `count` points satisfy `accept`, failing once the rejection
/// rate exceeds [`MAX_REJECTION`].
fn rejection_sample<S, A>(
    rng: &mut ChaCha8Rng,
    count: usize,
    modulus: &'static str,
    mut draw: S,
    accept: A,
) -> Result<(Vec<PrimalDualPoint>, usize)>
where
    S: FnMut(&mut ChaCha8Rng) -> PrimalDualPoint,
    A: Fn(&PrimalDualPoint) -> bool,
{
    let max_draws = ((count as f64) / (1.0 - MAX_REJECTION)).ceil() as usize;
    let mut out = Vec::with_capacity(count);
    let mut draws = 0usize;
    while out.len() < count {
        if draws >= max_draws {
            return Err(IdentError::RegionTooThin {
                modulus,
                rejected: draws - out.len(),
                draws,
            });
        }
        draws += 1;
        let z = draw(rng);
        if accept(&z) {
            out.push(z);
        }
    }
    Ok((out, draws))
}

/// Sampled upper bounds on `α_G`, `α_L` and `α_M`.
///
/// `α_G` and `α_L` share samples drawn uniformly from a ball around `S*` and
/// kept when `dist(z, S*) ≤ τ`. `α_M` samples are drawn from the subspace
/// `y_N = 0` (the identifiable set lies in it) inside the Euclidean ball that
/// contains `ball_P(z*, δ/2)`, and kept when they lie in that P-ball, within
/// `τ` of `S*`, and in `M`.
pub fn estimate_moduli(
    p: &ProblemSpec,
    oracle: &dyn SolutionOracle,
    partition: &ActiveSetPartition,
    metric: &PSeminorm,
    tau: f64,
    num_samples: usize,
    seed: u64,
) -> Result<ModuliEstimate> {
    if num_samples == 0 {
        return Err(IdentError::InvalidArgument("number of samples must be positive".into()));
    }
    if !(tau > 0.0) {
        return Err(IdentError::EmptyEstimate("alpha_G"));
    }
    let (n, m) = (p.n(), p.m());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let saddle = |z: &PrimalDualPoint| p.saddle_dist(z).value;

    let (center, r) = oracle.bounding_ball();
    let (mut shared, draws_g) = rejection_sample(
        &mut rng,
        num_samples,
        "alpha_G",
        |rng| {
            let off = uniform_in_ball(rng, n + m, r + tau);
            let c = center.to_flat();
            PrimalDualPoint::from_flat(n, &c.iter().zip(&off).map(|(a, b)| a + b).collect::<Vec<_>>())
        },
        |z| oracle.dist_s(z) <= tau,
    )?;
    shared.extend(oracle.witnesses().into_iter().filter(|w| oracle.dist_s(w) <= tau));
    let region_g = format!("S* + tau*B, tau = {}", format::fmt_real(tau));
    let (vg, ig) = min_ratio(&shared, saddle, |z| oracle.dist_s(z)).ok_or(IdentError::EmptyEstimate("alpha_G"))?;
    let alpha_g = Estimate {
        value: vg,
        argmin: shared[ig].clone(),
        num_samples: shared.len(),
        num_draws: draws_g,
        region: region_g.clone(),
    };
    let alpha_l = if oracle.dist_l(&center).is_some() {
        let dl = |z: &PrimalDualPoint| oracle.dist_l(z).unwrap_or(0.0);
        min_ratio(&shared, saddle, dl).map(|(v, i)| Estimate {
            value: v,
            argmin: shared[i].clone(),
            num_samples: shared.len(),
            num_draws: draws_g,
            region: region_g.clone(),
        })
    } else {
        None
    };

    let z_star = oracle.reference();
    let sr = stability_radius(p, &z_star, partition, metric)?;
    let ext = metric.eigen_extremes()?;
    let delta = sr.delta;
    let half = if delta.is_finite() { 0.5 * delta } else { tau };
    let euclid = if ext.lambda_min > 0.0 {
        half / ext.lambda_min.sqrt()
    } else {
        z_star.dist2(&center) + r + tau
    };
    let free: Vec<usize> = (0..n + m).filter(|i| *i < n || !partition.nonactive.contains(&(i - n))).collect();
    let zs = z_star.to_flat();
    let (pts, draws_m) = rejection_sample(
        &mut rng,
        num_samples,
        "alpha_M",
        |rng| {
            let off = uniform_in_ball(rng, free.len(), euclid);
            let mut v = zs.clone();
            for (k, i) in free.iter().enumerate() {
                v[*i] += off[k];
            }
            for &j in &partition.nonactive {
                v[n + j] = 0.0;
            }
            PrimalDualPoint::from_flat(n, &v)
        },
        |z| {
            metric.dist(z, &z_star).is_ok_and(|d| d <= half)
                && oracle.dist_s(z) <= tau
                && membership_m(p, partition, z, partition.eps)
        },
    )?;
    let alpha_m = min_ratio(&pts, saddle, |z| oracle.dist_s(z)).map(|(v, i)| Estimate {
        value: v,
        argmin: pts[i].clone(),
        num_samples: pts.len(),
        num_draws: draws_m,
        region: format!("D ∩ ball_P(z*, delta/2) ∩ M, delta/2 = {}", format::fmt_real(half)),
    });
    let ordering_consistent = match (&alpha_m, &alpha_l) {
        (Some(am), Some(al)) => {
            Some(am.value >= al.value - ORDERING_SLACK && al.value >= alpha_g.value - ORDERING_SLACK)
        }
        _ => None,
    };
    Ok(ModuliEstimate {
        alpha_g,
        alpha_l,
        alpha_m,
        tau,
        delta,
        kappa_p: ext.condition_number(),
        lambda_max_p: ext.lambda_max,
        ordering_consistent,
    })
}

/// `ν = γλ_max(P)/α` and `ρ = ⌈eν²⌉`.
pub fn predicted_bounds(gamma: f64, lambda_max: f64, alpha: f64) -> (f64, f64) {
    let nu = gamma * lambda_max / alpha;
    (nu, (std::f64::consts::E * nu * nu).ceil())
}

// ---------------------------------------------------------------------------
// two-stage rate fit
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoStageFit {
    /// Slope of `ln dist` before `k*`; `None` with fewer than two points there.
    pub pre_rate: Option<f64>,
    pub post_rate: f64,
    pub post_halflife: f64,
    pub post_points: usize,
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Least-squares slopes of `ln max(d, 1e-300)` against `k` on `[0, k*)` and `[k*, end)`.
pub fn fit_series(iters: &[u64], dists: &[f64], k_star: u64) -> Result<TwoStageFit> {
    let mut pre = (Vec::new(), Vec::new());
    let mut post = (Vec::new(), Vec::new());
    for (k, d) in iters.iter().zip(dists) {
        let side = if *k < k_star { &mut pre } else { &mut post };
        side.0.push(*k as f64);
        side.1.push(d.max(1e-300).ln());
    }
    if post.0.len() < MIN_POST_POINTS {
        return Err(IdentError::TooFewPoints {
            needed: MIN_POST_POINTS,
            got: post.0.len(),
        });
    }
    let post_rate = ls_slope(&post.0, &post.1);
    let pre_rate = if pre.0.len() >= 2 { Some(ls_slope(&pre.0, &pre.1)) } else { None };
    Ok(TwoStageFit {
        pre_rate,
        post_rate,
        post_halflife: std::f64::consts::LN_2 / post_rate.abs(),
        post_points: post.0.len(),
    })
}

/// Fits the `distP_ref` column. The final record is the reference point
/// itself (distance exactly zero) and is left out.
pub fn fit_two_stage(trace: &IterationTrace, k_star: u64) -> Result<TwoStageFit> {
    let recs = &trace.records[..trace.records.len().saturating_sub(1)];
    let iters: Vec<u64> = recs.iter().map(|r| r.iter).collect();
    let dists: Vec<f64> = recs.iter().map(|r| r.dist_p_ref).collect();
    fit_series(&iters, &dists, k_star)
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

fn one_based(v: &[usize]) -> String {
    format::fmt_indices(&v.iter().map(|j| j + 1).collect::<Vec<_>>())
}

fn opt_real(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), format::fmt_real)
}

/// Everything `analyze` reports about one run.
#[derive(Clone, Debug)]
pub struct AnalysisReport {
    pub instance: String,
    pub algorithm: solvers::Algorithm,
    pub stepsize: f64,
    pub iterations: u64,
    pub status: Status,
    pub final_kkt: f64,
    pub partition: ActiveSetPartition,
    pub k_star: Option<u64>,
    pub radius: Option<StabilityRadius>,
    pub radius_error: Option<String>,
    pub fit: Option<TwoStageFit>,
    pub fit_error: Option<String>,
    pub gamma: f64,
    pub moduli: Option<ModuliEstimate>,
}

/// Partition, `k*`, `δ` and rate fits for a finished run.
pub fn analyze_trace(p: &ProblemSpec, trace: &IterationTrace, instance: &str, eps: f64) -> Result<AnalysisReport> {
    let partition = classify(p, &trace.final_point, eps)?;
    let k_star = identification_iteration(trace, p, &partition, eps);
    let metric = solvers::p_seminorm(p, trace.algorithm, trace.eta);
    let (radius, radius_error) = match stability_radius(p, &trace.final_point, &partition, &metric) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (fit, fit_error) = match k_star {
        Some(k) => match fit_two_stage(trace, k) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, Some("active set not identified".into())),
    };
    Ok(AnalysisReport {
        instance: instance.to_string(),
        algorithm: trace.algorithm,
        stepsize: trace.eta,
        iterations: trace.iterations,
        status: trace.status,
        final_kkt: trace.final_kkt(),
        partition,
        k_star,
        radius,
        radius_error,
        fit,
        fit_error,
        gamma: solvers::sublinear_gamma(p, trace.algorithm, trace.eta)?,
        moduli: None,
    })
}

fn write_moduli(w: &mut format::Writer, m: &ModuliEstimate) {
    let mut est = |name: &str, e: &Option<Estimate>, missing: &str| match e {
        Some(e) => {
            w.real(name, e.value)
                .kv(&format!("{name}.samples"), e.num_samples)
                .kv(&format!("{name}.draws"), e.num_draws)
                .kv(&format!("{name}.region"), &e.region)
                .reals(&format!("{name}.argmin.x"), &e.argmin.x)
                .reals(&format!("{name}.argmin.y"), &e.argmin.y);
        }
        None => {
            w.kv(name, missing);
        }
    };
    est("alpha_G", &Some(m.alpha_g.clone()), "none");
    est("alpha_L", &m.alpha_l, "refused");
    est("alpha_M", &m.alpha_m, "none");
    w.real("tau", m.tau)
        .real("delta", m.delta)
        .real("kappa_P", m.kappa_p)
        .real("lambda_max_P", m.lambda_max_p)
        .kv(
            "ordering_consistent",
            m.ordering_consistent.map_or("unknown".to_string(), |b| b.to_string()),
        );
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut w = format::Writer::new(REPORT_HEADER);
        let part = &self.partition;
        w.comment(&format!(
            "{} on {}: {} after {} iterations, final kkt {:.3e}",
            self.algorithm,
            self.instance,
            self.status.name(),
            self.iterations,
            self.final_kkt
        ));
        w.comment(&format!(
            "{} at eps = {:.1e}; k* {}",
            if part.is_degenerate() { "degenerate" } else { "nondegenerate" },
            part.eps,
            self.k_star.map_or("not reached".to_string(), |k| format!("= {k}"))
        ));
        w.comment("indices below are 1-based; k* is resolved at the trace recording cadence");
        w.kv("kind", "analysis")
            .kv("instance", &self.instance)
            .kv("algorithm", self.algorithm)
            .real("stepsize", self.stepsize)
            .kv("iterations", self.iterations)
            .kv("status", self.status.name())
            .real("final_kkt", self.final_kkt)
            .real("eps", part.eps)
            .kv("N", one_based(&part.nonactive))
            .kv("B_a", one_based(&part.strongly_active))
            .kv("B_d", one_based(&part.degenerate))
            .kv("unclassified", one_based(&part.unclassified))
            .kv("degenerate", part.is_degenerate())
            .kv("k_star", self.k_star.map_or("none".to_string(), |k| k.to_string()));
        match &self.radius {
            Some(r) => {
                w.real("delta", r.delta).kv(
                    "delta_binding",
                    r.binding.map_or("none".to_string(), |(j, b)| format!("{b} {}", j + 1)),
                );
            }
            None => {
                w.kv("delta", "none")
                    .kv("delta_error", self.radius_error.as_deref().unwrap_or("unknown"));
            }
        }
        match &self.fit {
            Some(f) => {
                w.kv("pre_rate", opt_real(f.pre_rate))
                    .real("post_rate", f.post_rate)
                    .real("post_halflife", f.post_halflife)
                    .kv("post_points", f.post_points);
            }
            None => {
                w.kv("pre_rate", "none")
                    .kv("post_rate", "none")
                    .kv("fit_error", self.fit_error.as_deref().unwrap_or("unknown"));
            }
        }
        w.real("gamma", self.gamma);
        if let Some(m) = &self.moduli {
            write_moduli(&mut w, m);
            for (name, alpha) in [
                ("G", Some(m.alpha_g.value)),
                ("M", m.alpha_m.as_ref().map(|e| e.value)),
            ] {
                if let Some(a) = alpha {
                    let (nu, rho) = predicted_bounds(self.gamma, m.lambda_max_p, a);
                    w.real(&format!("nu_{name}"), nu).real(&format!("rho_{name}"), rho);
                }
            }
        }
        w.finish()
    }
}

/// Report written by the `moduli` command.
pub fn moduli_report_text(instance: &str, metric: &str, samples: usize, seed: u64, m: &ModuliEstimate) -> String {
    let mut w = format::Writer::new(REPORT_HEADER);
    w.comment(&format!(
        "sampled moduli on {instance}; every value is the minimum sampled ratio, an upper bound on the infimum"
    ));
    w.kv("kind", "moduli")
        .kv("instance", instance)
        .kv("metric", metric)
        .kv("samples", samples)
        .kv("seed", seed);
    write_moduli(&mut w, m);
    w.finish()
}
