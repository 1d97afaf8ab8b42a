//! PDHG, ADMM and the extragradient method (EGM) as primal-dual step maps
//! `z ↦ (z⁺, z̃⁺)`, the driver loop with trace recording, and the trace CSV
//! and run summary writers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::format::{self, Document, FormatError};
use crate::linalg::{axpy, op_norm, LinalgError, Matrix, PSeminorm, SpdFactor};
use crate::problem::{PrimalDualPoint, ProblemClass, ProblemError, ProblemSpec, DUAL_RANGE_TOL};

/// Abort threshold on `‖z^k‖₂`.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Tolerance used when computing operator norms for stepsizes.
pub const OP_NORM_TOL: f64 = 1e-12;

pub const CSV_HEADER: &str = "iter,kkt,step_norm_P,aux_gap_P,dist2_ref,distP_ref,num_dual_pos,num_primal_tight";

pub const SUMMARY_HEADER: &str = "saddlekit-summary v1";

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("{algorithm} does not support {class} problems (quadratic constraints)")]
    Unsupported { algorithm: Algorithm, class: ProblemClass },
    #[error("invalid stepsize {eta}: {reason}")]
    InvalidStepsize { eta: f64, reason: String },
    #[error("iterates diverged: ‖z‖ = {norm:.3e} at iteration {iter}")]
    Diverged { iter: u64, norm: f64 },
    #[error("initial point: {0}")]
    BadInit(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Pdhg,
    Admm,
    Egm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Pdhg, Algorithm::Admm, Algorithm::Egm];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pdhg => "pdhg",
            Algorithm::Admm => "admm",
            Algorithm::Egm => "egm",
        }
    }

    pub fn supports(self, class: ProblemClass) -> bool {
        self == Algorithm::Egm || class != ProblemClass::Qcqp
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pdhg" => Ok(Algorithm::Pdhg),
            "admm" => Ok(Algorithm::Admm),
            "egm" => Ok(Algorithm::Egm),
            _ => Err(format!("unknown algorithm `{s}` (expected pdhg, admm or egm)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stepsize {
    Auto,
    Fixed(f64),
}

impl fmt::Display for Stepsize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stepsize::Auto => f.write_str("auto"),
            Stepsize::Fixed(v) => f.write_str(&format::fmt_real(*v)),
        }
    }
}

impl FromStr for Stepsize {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Stepsize::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Stepsize::Fixed(v)),
            _ => Err(format!("stepsize must be `auto` or a positive real, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Zero,
    /// Uniform on the sphere of the given radius in `R^{n+m}`, drawn from the config seed.
    Sphere(f64),
    Explicit(PrimalDualPoint),
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub stepsize: Stepsize,
    pub max_iters: u64,
    pub kkt_tol: f64,
    /// Every iteration up to this one is recorded.
    pub dense_prefix: u64,
    /// Recording stride after the dense prefix.
    pub trace_every: u64,
    pub seed: u64,
    pub init: Init,
    /// Tolerance of the active-set snapshots stored with each record.
    pub snapshot_eps: f64,
    /// Accept a PDHG stepsize with `η‖A‖ ≥ 1`.
    pub allow_large_pdhg_step: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        SolverConfig {
            algorithm,
            stepsize: Stepsize::Auto,
            max_iters: 1_000_000,
            kkt_tol: 1e-10,
            dense_prefix: 10_000,
            trace_every: 10,
            seed: 0,
            init: Init::Zero,
            snapshot_eps: 1e-10,
            allow_large_pdhg_step: false,
        }
    }

    pub fn with_stepsize(mut self, eta: f64) -> Self {
        self.stepsize = Stepsize::Fixed(eta);
        self
    }

    pub fn with_max_iters(mut self, k: u64) -> Self {
        self.max_iters = k;
        self
    }

    pub fn with_kkt_tol(mut self, tol: f64) -> Self {
        self.kkt_tol = tol;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_snapshot_eps(mut self, eps: f64) -> Self {
        self.snapshot_eps = eps;
        self
    }

    fn records(&self, k: u64) -> bool {
        k <= self.dense_prefix || (self.trace_every > 0 && k.is_multiple_of(self.trace_every))
    }
}

/// `0.99/‖A‖` for LP/QP, `(‖A‖ + Σ_k ‖Q^k‖)⁻¹` for QCQP where the rows of
/// `A` are the constraint linear parts and the sum includes the objective.
pub fn auto_stepsize(p: &ProblemSpec) -> Result<f64> {
    let a = p.linear_rows();
    let na = if a.is_zero() { 0.0 } else { op_norm(a, OP_NORM_TOL)? };
    if p.class() == ProblemClass::Qcqp {
        let mut s = na + p.constraint_hessian_norm_sum()?;
        if let Some(q) = p.q() {
            s += op_norm(q, OP_NORM_TOL)?;
        }
        return Ok(1.0 / s);
    }
    if na == 0.0 {
        return Err(SolverError::InvalidStepsize {
            eta: f64::NAN,
            reason: "automatic stepsize needs a nonzero constraint matrix".into(),
        });
    }
    Ok(0.99 / na)
}

/// Smoothness bound `L` used for the EGM constant: `‖Q‖ + ‖A‖` for LP/QP and
/// `‖A‖ + Σ_k ‖Q^k‖` for QCQP.
pub fn egm_smoothness(p: &ProblemSpec) -> Result<f64> {
    let a = p.linear_rows();
    let mut l = if a.is_zero() { 0.0 } else { op_norm(a, OP_NORM_TOL)? };
    if let Some(q) = p.q() {
        l += op_norm(q, OP_NORM_TOL)?;
    }
    l += p.constraint_hessian_norm_sum()?;
    Ok(l)
}

/// The seminorm each method is nonexpansive in.
pub fn p_seminorm(p: &ProblemSpec, algorithm: Algorithm, eta: f64) -> PSeminorm {
    match algorithm {
        Algorithm::Pdhg => PSeminorm::pdhg(eta, p.linear_rows().clone()),
        Algorithm::Admm => PSeminorm::admm(eta, p.linear_rows().clone()),
        Algorithm::Egm => PSeminorm::identity(p.n(), p.m()),
    }
}

/// Constant `γ` of the sublinear step bound `‖z^{k+1} − z^k‖_P ≤ γ‖z⁰ − z*‖_P/√k`.
pub fn sublinear_gamma(p: &ProblemSpec, algorithm: Algorithm, eta: f64) -> Result<f64> {
    match algorithm {
        Algorithm::Pdhg | Algorithm::Admm => Ok(1.0),
        Algorithm::Egm => {
            let el = eta * egm_smoothness(p)?;
            Ok(if el < 1.0 { 3.0 / (1.0 - el * el).sqrt() } else { f64::INFINITY })
        }
    }
}

/// Output of one primal-dual step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub next: PrimalDualPoint,
    pub aux: PrimalDualPoint,
}

/// A step map with its constant linear-system factorizations cached.
#[derive(Clone, Debug)]
pub struct Stepper<'a> {
    p: &'a ProblemSpec,
    algorithm: Algorithm,
    eta: f64,
    a: Arc<Matrix>,
    factor: Option<SpdFactor>,
}

fn project_nonneg(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// `max(y + ηg, 0)` with negatives clamped to literal zero.
pub fn projected_dual(y: &[f64], eta: f64, g: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    axpy(eta, g, &mut out);
    project_nonneg(&mut out);
    out
}

impl<'a> Stepper<'a> {
    pub fn new(p: &'a ProblemSpec, algorithm: Algorithm, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(SolverError::InvalidStepsize {
                eta,
                reason: "must be positive and finite".into(),
            });
        }
        if !algorithm.supports(p.class()) {
            return Err(SolverError::Unsupported {
                algorithm,
                class: p.class(),
            });
        }
        let a = p.linear_rows().clone();
        let factor = match algorithm {
            Algorithm::Pdhg => p.q().map(|q| SpdFactor::new(&Matrix::identity(p.n()).add_scaled(eta, q).unwrap())),
            Algorithm::Admm => {
                let mut m = a.gram().scaled(eta);
                if let Some(q) = p.q() {
                    m = m.add_scaled(1.0, q)?;
                }
                Some(SpdFactor::new(&m))
            }
            Algorithm::Egm => None,
        };
        Ok(Stepper {
            p,
            algorithm,
            eta,
            a,
            factor,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn step(&self, z: &PrimalDualPoint) -> Result<Step> {
        match self.algorithm {
            Algorithm::Pdhg => self.pdhg(z),
            Algorithm::Admm => self.admm(z),
            Algorithm::Egm => Ok(self.egm(z)),
        }
    }

    fn pdhg(&self, z: &PrimalDualPoint) -> Result<Step> {
        let eta = self.eta;
        let mut r = z.x.clone();
        let mut grad = self.a.mul_vec_t(&z.y);
        axpy(1.0, self.p.c(), &mut grad);
        axpy(-eta, &grad, &mut r);
        let x_next = match &self.factor {
            Some(f) => f.solve(&r, f64::INFINITY)?,
            None => r,
        };
        let x_bar: Vec<f64> = x_next.iter().zip(&z.x).map(|(a, b)| 2.0 * a - b).collect();
        let y_next = projected_dual(&z.y, eta, &self.p.eval_g(&x_bar));
        Ok(Step {
            next: PrimalDualPoint::new(x_next, y_next),
            aux: PrimalDualPoint::new(x_bar, z.y.clone()),
        })
    }

    fn admm(&self, z: &PrimalDualPoint) -> Result<Step> {
        let eta = self.eta;
        let g = self.p.eval_g(&z.x);
        // u⁺ = max(b − Ax − y/η, 0); the dual update is written in its
        // projected form, which equals y + η(Ax − b + u⁺) but clamps exactly.
        let u: Vec<f64> = g.iter().zip(&z.y).map(|(gj, yj)| (-gj - yj / eta).max(0.0)).collect();
        let y_next = projected_dual(&z.y, eta, &g);
        let mut rhs = self.a.mul_vec_t(&y_next);
        axpy(1.0, self.p.c(), &mut rhs);
        let bu: Vec<f64> = self.p.b().iter().zip(&u).map(|(b, u)| b - u).collect();
        let atbu = self.a.mul_vec_t(&bu);
        let rhs: Vec<f64> = rhs.iter().zip(&atbu).map(|(r, t)| -r + eta * t).collect();
        let f = self.factor.as_ref().expect("ADMM factor");
        let tol = 1e-8 * crate::linalg::norm2(&rhs).max(1.0);
        let x_next = f.solve(&rhs, tol)?;
        let next = PrimalDualPoint::new(x_next, y_next);
        Ok(Step { aux: next.clone(), next })
    }

    fn egm(&self, z: &PrimalDualPoint) -> Step {
        let eta = self.eta;
        let (gx, gy) = self.p.lagrangian_grads(z);
        let mut x_t = z.x.clone();
        axpy(-eta, &gx, &mut x_t);
        let y_t = projected_dual(&z.y, eta, &gy);
        let aux = PrimalDualPoint::new(x_t, y_t);
        let (gx_t, gy_t) = self.p.lagrangian_grads(&aux);
        let mut x_next = z.x.clone();
        axpy(-eta, &gx_t, &mut x_next);
        let y_next = projected_dual(&z.y, eta, &gy_t);
        Step {
            next: PrimalDualPoint::new(x_next, y_next),
            aux,
        }
    }
}

/// One PDHG step (`z̃⁺ = (2x⁺ − x, y)`).
pub fn pdhg_step(p: &ProblemSpec, z: &PrimalDualPoint, eta: f64) -> Result<Step> {
    Stepper::new(p, Algorithm::Pdhg, eta)?.step(z)
}

/// One ADMM step (`z̃⁺ = z⁺`).
pub fn admm_step(p: &ProblemSpec, z: &PrimalDualPoint, eta: f64) -> Result<Step> {
    Stepper::new(p, Algorithm::Admm, eta)?.step(z)
}

/// One extragradient step (`z̃⁺` is the extrapolated point).
pub fn egm_step(p: &ProblemSpec, z: &PrimalDualPoint, eta: f64) -> Result<Step> {
    Stepper::new(p, Algorithm::Egm, eta)?.step(z)
}

/// Packed bit set over constraint indices.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BitSet {
    words: Vec<u64>,
    len: usize,
}

impl BitSet {
    pub fn from_fn(len: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut words = vec![0u64; len.div_ceil(64)];
        for i in 0..len {
            if f(i) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        BitSet { words, len }
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Sign pattern of an iterate at tolerance `ε`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSnapshot {
    /// `y_j > ε`
    pub dual_pos: BitSet,
    /// `|y_j| < ε`
    pub dual_small: BitSet,
    /// `g_j(x) < −ε`
    pub primal_slack: BitSet,
    /// `y ≥ 0`
    pub dual_feasible: bool,
}

impl ActiveSnapshot {
    pub fn new(g: &[f64], y: &[f64], eps: f64) -> Self {
        ActiveSnapshot {
            dual_pos: BitSet::from_fn(y.len(), |j| y[j] > eps),
            dual_small: BitSet::from_fn(y.len(), |j| y[j].abs() < eps),
            primal_slack: BitSet::from_fn(g.len(), |j| g[j] < -eps),
            dual_feasible: y.iter().all(|v| *v >= 0.0),
        }
    }

    pub fn num_dual_pos(&self) -> usize {
        self.dual_pos.count()
    }

    /// `|{j : g_j(x) ≥ −ε}|`
    pub fn num_primal_tight(&self) -> usize {
        self.primal_slack.len() - self.primal_slack.count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: u64,
    pub kkt: f64,
    /// `‖z^{k+1} − z^k‖_P`; at the final record this is a probe step that is not taken.
    pub step_norm_p: f64,
    /// `‖z^k − z̃^k‖_P`, zero at `k = 0`.
    pub aux_gap_p: f64,
    /// `‖z^k − z_ref‖₂` with `z_ref` the final iterate.
    pub dist2_ref: f64,
    /// `‖z^k − z_ref‖_P`
    pub dist_p_ref: f64,
    pub snapshot: ActiveSnapshot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    IterationLimit,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::IterationLimit => "iteration-limit",
        }
    }
}

impl FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "converged" => Ok(Status::Converged),
            "iteration-limit" => Ok(Status::IterationLimit),
            _ => Err(format!("unknown status `{s}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub records: Vec<TraceRecord>,
    /// Iterates at the recorded iterations, parallel to `records`.
    pub points: Vec<PrimalDualPoint>,
    pub final_point: PrimalDualPoint,
    pub iterations: u64,
    pub status: Status,
    pub snapshot_eps: f64,
}

impl IterationTrace {
    pub fn final_kkt(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.kkt)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                format::fmt_real(r.kkt),
                format::fmt_real(r.step_norm_p),
                format::fmt_real(r.aux_gap_p),
                format::fmt_real(r.dist2_ref),
                format::fmt_real(r.dist_p_ref),
                r.snapshot.num_dual_pos(),
                r.snapshot.num_primal_tight()
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// One numeric row of a trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub iter: u64,
    pub kkt: f64,
    pub step_norm_p: f64,
    pub aux_gap_p: f64,
    pub dist2_ref: f64,
    pub dist_p_ref: f64,
    pub num_dual_pos: usize,
    pub num_primal_tight: usize,
}

/// Parses a trace CSV written by [`IterationTrace::write_csv`].
pub fn read_csv(text: &str) -> std::result::Result<Vec<CsvRow>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(FormatError::Parse {
                line: 1,
                col: 1,
                msg: format!("expected CSV header `{CSV_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |col: usize, msg: &str| FormatError::Parse {
            line: ln + 1,
            col,
            msg: msg.to_string(),
        };
        if fields.len() != 8 {
            return Err(bad(1, "expected 8 fields"));
        }
        let real = |i: usize| fields[i].trim().parse::<f64>().map_err(|_| bad(i + 1, "bad real"));
        let int = |i: usize| fields[i].trim().parse::<u64>().map_err(|_| bad(i + 1, "bad integer"));
        rows.push(CsvRow {
            iter: int(0)?,
            kkt: real(1)?,
            step_norm_p: real(2)?,
            aux_gap_p: real(3)?,
            dist2_ref: real(4)?,
            dist_p_ref: real(5)?,
            num_dual_pos: int(6)? as usize,
            num_primal_tight: int(7)? as usize,
        });
    }
    Ok(rows)
}

/// Data passed to a run observer after each adopted step `z^k → z^{k+1}`.
pub struct StepEvent<'e> {
    pub k: u64,
    pub z: &'e PrimalDualPoint,
    pub next: &'e PrimalDualPoint,
    pub aux: &'e PrimalDualPoint,
}

/// Resolves the stepsize and checks it against the algorithm's hypotheses.
pub fn resolve_stepsize(p: &ProblemSpec, cfg: &SolverConfig) -> Result<f64> {
    let eta = match cfg.stepsize {
        Stepsize::Auto => auto_stepsize(p)?,
        Stepsize::Fixed(eta) => eta,
    };
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(SolverError::InvalidStepsize {
            eta,
            reason: "must be positive and finite".into(),
        });
    }
    if cfg.algorithm == Algorithm::Pdhg && !cfg.allow_large_pdhg_step && !p.linear_rows().is_zero() {
        let na = op_norm(p.linear_rows(), OP_NORM_TOL)?;
        if eta * na >= 1.0 {
            return Err(SolverError::InvalidStepsize {
                eta,
                reason: format!("PDHG needs η‖A‖ < 1, but η‖A‖ = {:.6}", eta * na),
            });
        }
    }
    Ok(eta)
}

pub fn initial_point(p: &ProblemSpec, cfg: &SolverConfig) -> Result<PrimalDualPoint> {
    let (n, m) = (p.n(), p.m());
    match &cfg.init {
        Init::Zero => Ok(PrimalDualPoint::zeros(n, m)),
        Init::Sphere(r) => {
            if !(*r >= 0.0 && r.is_finite()) {
                return Err(SolverError::BadInit(format!("sphere radius must be non-negative, got {r}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let v: Vec<f64> = (0..n + m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nv = crate::linalg::norm2(&v);
            let v: Vec<f64> = v.iter().map(|t| r * t / nv).collect();
            Ok(PrimalDualPoint::from_flat(n, &v))
        }
        Init::Explicit(z) => {
            p.validate_point(z).map_err(|e| SolverError::BadInit(e.to_string()))?;
            Ok(z.clone())
        }
    }
}

pub fn run(p: &ProblemSpec, cfg: &SolverConfig) -> Result<IterationTrace> {
    run_observed(p, cfg, |_| {})
}

/// Runs until `kkt ≤ kkt_tol` or `max_iters`, calling `observe` after every
/// adopted step.
pub fn run_observed<F>(p: &ProblemSpec, cfg: &SolverConfig, mut observe: F) -> Result<IterationTrace>
where
    F: FnMut(&StepEvent<'_>),
{
    let eta = resolve_stepsize(p, cfg)?;
    let stepper = Stepper::new(p, cfg.algorithm, eta)?;
    let pnorm = p_seminorm(p, cfg.algorithm, eta);
    let mut z = initial_point(p, cfg)?;
    let mut aux = z.clone();
    let mut records = Vec::new();
    let mut points = Vec::new();
    let mut k: u64 = 0;
    info!("{} on {} problem (n = {}, m = {}), eta = {:.6e}", cfg.algorithm, p.class(), p.n(), p.m(), eta);
    let status = loop {
        let kkt = p.kkt_residual(&z, DUAL_RANGE_TOL);
        let converged = kkt <= cfg.kkt_tol;
        let stop = converged || k >= cfg.max_iters;
        let step = stepper.step(&z)?;
        if stop || cfg.records(k) {
            let g = p.eval_g(&z.x);
            records.push(TraceRecord {
                iter: k,
                kkt,
                step_norm_p: pnorm.dist(&step.next, &z)?,
                aux_gap_p: pnorm.dist(&z, &aux)?,
                dist2_ref: f64::NAN,
                dist_p_ref: f64::NAN,
                snapshot: ActiveSnapshot::new(&g, &z.y, cfg.snapshot_eps),
            });
            points.push(z.clone());
        }
        if stop {
            break if converged { Status::Converged } else { Status::IterationLimit };
        }
        observe(&StepEvent {
            k,
            z: &z,
            next: &step.next,
            aux: &step.aux,
        });
        let norm = step.next.norm2();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(SolverError::Diverged { iter: k + 1, norm });
        }
        z = step.next;
        aux = step.aux;
        k += 1;
        if k.is_multiple_of(100_000) {
            debug!("iteration {k}: kkt = {kkt:.3e}");
        }
    };
    for (r, pt) in records.iter_mut().zip(&points) {
        r.dist2_ref = pt.dist2(&z);
        r.dist_p_ref = pnorm.dist(pt, &z)?;
    }
    info!("{} after {} iterations", status.name(), k);
    Ok(IterationTrace {
        algorithm: cfg.algorithm,
        eta,
        records,
        points,
        final_point: z,
        iterations: k,
        status,
        snapshot_eps: cfg.snapshot_eps,
    })
}

/// Sidecar file describing a run; enough to replay it.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub stepsize: f64,
    pub stepsize_request: String,
    pub iterations: u64,
    pub status: Status,
    pub final_kkt: f64,
    pub final_point: PrimalDualPoint,
    pub instance: String,
    pub init: String,
    pub seed: u64,
    pub max_iters: u64,
    pub kkt_tol: f64,
    pub allow_large_pdhg_step: bool,
    pub wall_time_s: Option<f64>,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let mut w = format::Writer::new(SUMMARY_HEADER);
        w.kv("algorithm", self.algorithm)
            .kv("instance", &self.instance)
            .real("stepsize", self.stepsize)
            .kv("stepsize_request", &self.stepsize_request)
            .kv("allow_large_pdhg_step", self.allow_large_pdhg_step)
            .kv("init", &self.init)
            .kv("seed", self.seed)
            .kv("max_iters", self.max_iters)
            .real("kkt_tol", self.kkt_tol)
            .kv("iterations", self.iterations)
            .kv("status", self.status.name())
            .real("final_kkt", self.final_kkt)
            .reals("x", &self.final_point.x)
            .reals("y", &self.final_point.y);
        if let Some(t) = self.wall_time_s {
            w.real("wall_time_s", t);
        }
        w.finish()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, FormatError> {
        let doc = Document::parse(text)?;
        doc.expect_header(SUMMARY_HEADER)?;
        let text_of = |k: &str| doc.require(k).map(|e| e.text().to_string());
        let parse_with = |k: &str, f: &dyn Fn(&str) -> std::result::Result<(), String>| -> std::result::Result<(), FormatError> {
            let e = doc.require(k)?;
            f(e.text()).map_err(|msg| FormatError::Parse {
                line: e.line,
                col: e.col,
                msg,
            })
        };
        parse_with("algorithm", &|s| s.parse::<Algorithm>().map(|_| ()))?;
        parse_with("status", &|s| s.parse::<Status>().map(|_| ()))?;
        Ok(RunSummary {
            algorithm: text_of("algorithm")?.parse().expect("checked"),
            stepsize: doc.require("stepsize")?.real()?,
            stepsize_request: text_of("stepsize_request")?,
            iterations: doc.require("iterations")?.u64()?,
            status: text_of("status")?.parse().expect("checked"),
            final_kkt: doc.require("final_kkt")?.real()?,
            final_point: PrimalDualPoint::new(doc.require("x")?.reals()?, doc.require("y")?.reals()?),
            instance: text_of("instance")?,
            init: text_of("init")?,
            seed: doc.require("seed")?.u64()?,
            max_iters: doc.require("max_iters")?.u64()?,
            kkt_tol: doc.require("kkt_tol")?.real()?,
            allow_large_pdhg_step: doc.require("allow_large_pdhg_step")?.bool()?,
            wall_time_s: doc.get("wall_time_s").map(|e| e.real()).transpose()?,
        })
    }
}
