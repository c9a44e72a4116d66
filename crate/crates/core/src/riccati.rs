//! Backward integration of generalized Riccati terminal-value problems.
//!
//! Every Riccati equation in the toolkit has the form
//!
//! ```text
//! -dY/dt = A_0ᵀY + YA_0 + Σ A_kᵀ W A_k + Q
//!          - (YB_0 + Σ A_kᵀ W B_k + S)(R + Σ B_kᵀ W B_k)⁻¹(B_0ᵀY + Σ B_kᵀ W A_k + Sᵀ),
//! Y(T) = terminal,
//! ```
//!
//! where `W = Y` for the self-weighted equation and `W` is a previously
//! computed trajectory for the externally weighted (mean) equations. The
//! integrator is classic RK4 on a uniform grid with cubic Hermite dense
//! output, and it stops at the first sign of a singular inner matrix, finite
//! escape, or loss of a monitored sign regime.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    has_non_finite, inv_sqrt_spd, max_abs, max_eig, min_eig, sqrt_spd, sym_eigenvalues, symmetrize, Inertia, Mat,
    SymIndefinite,
};
use crate::problem::{GameProblem, HattedView, LqProblem};
use crate::schedule::{Schedule, UniformGrid};

/// Uniform-definiteness threshold for regime verdicts.
pub const EPS_SIGN: f64 = 1e-9;
/// Condition-number guard on every inner inverse.
pub const KAPPA_MAX: f64 = 1e12;
/// Norm guard for finite-escape detection.
pub const NORM_MAX: f64 = 1e12;

/// Where the quadratic weights inside the Σ-terms come from.
#[derive(Debug, Clone, Copy)]
pub enum WeightSource<'a> {
    /// The unknown itself.
    SelfWeight,
    /// A previously computed trajectory.
    External(&'a RiccatiTrajectory),
}

#[derive(Debug, Clone)]
pub struct RiccatiKernel<'a> {
    pub a: Vec<Schedule>,
    pub b: Vec<Schedule>,
    pub q: Schedule,
    pub s: Schedule,
    pub r: Schedule,
    pub terminal: Mat,
    pub source: WeightSource<'a>,
}

impl<'a> RiccatiKernel<'a> {
    /// Self-weighted kernel on the base coefficients, terminal `G`.
    pub fn base(lq: &LqProblem) -> Self {
        Self {
            a: lq.a.clone(),
            b: lq.b.clone(),
            q: lq.q.clone(),
            s: lq.s.clone(),
            r: lq.r.clone(),
            terminal: lq.g.clone(),
            source: WeightSource::SelfWeight,
        }
    }

    /// Kernel on hatted coefficients with Σ-weights from `reference`, terminal `Ĝ`.
    pub fn mean(h: &HattedView, reference: &'a RiccatiTrajectory) -> Self {
        Self {
            a: h.a.clone(),
            b: h.b.clone(),
            q: h.q.clone(),
            s: h.s.clone(),
            r: h.r.clone(),
            terminal: h.g.clone(),
            source: WeightSource::External(reference),
        }
    }

    pub fn n(&self) -> usize {
        self.terminal.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.a.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.q.end()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.r.shape().0;
        if self.a.is_empty() || self.a.len() != self.b.len() {
            return Err(Error::Shape("kernel needs matching A and B lists".into()));
        }
        if self.terminal.shape() != (n, n) || self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(Error::Shape("kernel weight shapes are inconsistent".into()));
        }
        if self.s.shape() != (n, m)
            || self.a.iter().any(|a| a.shape() != (n, n))
            || self.b.iter().any(|b| b.shape() != (n, m))
        {
            return Err(Error::Shape("kernel coefficient shapes are inconsistent".into()));
        }
        if crate::linalg::max_abs_diff(&self.terminal, &self.terminal.transpose()) > 1e-12 * max_abs(&self.terminal).max(1.0) {
            return Err(Error::Shape("kernel terminal must be symmetric".into()));
        }
        Ok(())
    }
}

/// Why an integration stopped before reaching `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    /// Inner matrix singular or worse conditioned than [`KAPPA_MAX`].
    SingularInner { min_abs_eig: f64, condition: f64 },
    /// The inner matrix changed inertia between evaluations.
    InertiaChange,
    /// Solution norm exceeded [`NORM_MAX`] or became non-finite.
    BlowUp { norm: f64 },
    /// One step changed the solution by more than its own scale.
    FiniteEscape { relative_change: f64 },
    /// A monitored sign regime lost its margin.
    RegimeLost { regime: Regime, margin: f64 },
    /// The external weight trajectory does not reach further.
    ReferenceTruncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Global,
    Singular { t_star: f64, reason: StopReason },
}

/// Symmetric-matrix trajectory on `[t_min, T]` with Hermite dense output.
#[derive(Debug, Clone)]
pub struct RiccatiTrajectory {
    grid: UniformGrid,
    first: usize,
    values: Vec<Mat>,
    derivs: Vec<Mat>,
    pub termination: Termination,
}

impl RiccatiTrajectory {
    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn first_index(&self) -> usize {
        self.first
    }

    pub fn t_min(&self) -> f64 {
        self.grid.time(self.first)
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon
    }

    pub fn is_global(&self) -> bool {
        matches!(self.termination, Termination::Global)
    }

    /// Grid times from `t_min` to `T`, ascending.
    pub fn times(&self) -> Vec<f64> {
        (self.first..=self.grid.steps).map(|i| self.grid.time(i)).collect()
    }

    /// Stored values, ascending in time.
    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    /// Value at grid index `i` (absolute index on the full grid).
    pub fn at_index(&self, i: usize) -> &Mat {
        &self.values[i - self.first]
    }

    /// Time derivative at grid index `i`.
    pub fn deriv_at_index(&self, i: usize) -> &Mat {
        &self.derivs[i - self.first]
    }

    pub fn covers(&self, t: f64) -> bool {
        let slack = 1e-12 * self.grid.horizon.max(1.0);
        t >= self.t_min() - slack && t <= self.grid.horizon + slack
    }

    /// Cubic Hermite interpolation between grid values.
    pub fn eval(&self, t: f64) -> Result<Mat> {
        if !self.covers(t) {
            return Err(Error::Shape(format!(
                "trajectory evaluated at t = {t} outside [{}, {}]",
                self.t_min(),
                self.grid.horizon
            )));
        }
        let n = self.grid.steps;
        if self.first == n {
            return Ok(self.values[0].clone());
        }
        let h = self.grid.step();
        let t = t.clamp(self.t_min(), self.grid.horizon);
        let mut i = ((t / h).floor() as usize).clamp(self.first, n - 1);
        if t < self.grid.time(i) && i > self.first {
            i -= 1;
        }
        let t0 = self.grid.time(i);
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        if s == 0.0 {
            return Ok(self.at_index(i).clone());
        }
        if s == 1.0 {
            return Ok(self.at_index(i + 1).clone());
        }
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(self.at_index(i) * h00
            + self.deriv_at_index(i) * (h10 * h)
            + self.at_index(i + 1) * h01
            + self.deriv_at_index(i + 1) * (h11 * h))
    }

    /// Largest entry-wise gap to `other` over shared grid points.
    pub fn max_abs_diff(&self, other: &RiccatiTrajectory) -> f64 {
        assert_eq!(self.grid, other.grid, "trajectories live on different grids");
        let lo = self.first.max(other.first);
        (lo..=self.grid.steps)
            .map(|i| crate::linalg::max_abs_diff(self.at_index(i), other.at_index(i)))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(max_abs).fold(0.0, f64::max)
    }
}

/// `R + Σ_{j≥1} B_jᵀ X B_j` for a given `X`.
#[derive(Debug, Clone)]
pub struct WeightSpec {
    /// `B_0..B_r`; only `j ≥ 1` enter the weight.
    pub b: Vec<Schedule>,
    pub r: Schedule,
}

impl WeightSpec {
    pub fn weight(&self, t: f64, x: &Mat) -> Mat {
        let mut w = self.r.eval(t);
        for bj in self.b.iter().skip(1) {
            let bj = bj.eval(t);
            w += bj.transpose() * x * &bj;
        }
        symmetrize(&w)
    }
}

/// The weight `ℝ(t, X)` with its player partition.
#[derive(Debug, Clone)]
pub struct BlockWeight {
    pub t: f64,
    pub full: Mat,
    pub m1: usize,
}

impl BlockWeight {
    pub fn m2(&self) -> usize {
        self.full.nrows() - self.m1
    }
    pub fn r11(&self) -> Mat {
        self.full.view((0, 0), (self.m1, self.m1)).into_owned()
    }
    pub fn r12(&self) -> Mat {
        self.full.view((0, self.m1), (self.m1, self.m2())).into_owned()
    }
    pub fn r22(&self) -> Mat {
        self.full.view((self.m1, self.m1), (self.m2(), self.m2())).into_owned()
    }
}

/// `ℝ(t, X)` (or `ℝ̂(t, X)` when `hatted`), split at `m1`.
pub fn block_weight(p: &GameProblem, x_t: &Mat, t: f64, hatted: bool) -> BlockWeight {
    let spec = if hatted {
        let h = p.hatted();
        WeightSpec { b: h.b, r: h.r }
    } else {
        WeightSpec { b: p.lq.b.clone(), r: p.lq.r.clone() }
    };
    BlockWeight { t, full: spec.weight(t, x_t), m1: p.m1 }
}

fn invertible(a: &Mat, t: f64, what: &str) -> Result<SymIndefinite> {
    let ev = sym_eigenvalues(a);
    let lo = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let hi = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if lo == 0.0 || hi / lo > KAPPA_MAX {
        return Err(Error::Factorization {
            t,
            reason: format!("{what} is singular (min |eigenvalue| {lo:.3e})"),
        });
    }
    Ok(SymIndefinite::new(a))
}

/// `R11 - R12 R22⁻¹ R12ᵀ`.
pub fn schur22(w: &BlockWeight) -> Result<Mat> {
    let r22 = w.r22();
    let f = invertible(&r22, w.t, "R22 block")?;
    let r12 = w.r12();
    let x = f.solve(&r12.transpose()).expect("nonsingular");
    Ok(symmetrize(&(w.r11() - r12 * x)))
}

/// `R22 - R12ᵀ R11⁻¹ R12`, the Schur complement used after a role swap.
pub fn schur11(w: &BlockWeight) -> Result<Mat> {
    let r11 = w.r11();
    let f = invertible(&r11, w.t, "R11 block")?;
    let r12 = w.r12();
    let x = f.solve(&r12).expect("nonsingular");
    Ok(symmetrize(&(w.r22() - r12.transpose() * x)))
}

/// Minimum eigenvalue of the symmetric part.
pub fn definiteness_margin(s: &Mat) -> f64 {
    min_eig(s)
}

/// `ℝ = Vᵀ diag(-I, I) V` with `V = [[V11, 0], [V21, V22]]`.
#[derive(Debug, Clone)]
pub struct VFactor {
    pub v11: Mat,
    pub v21: Mat,
    pub v22: Mat,
}

impl VFactor {
    pub fn v(&self) -> Mat {
        let (m1, m2) = (self.v11.nrows(), self.v22.nrows());
        let mut v = Mat::zeros(m1 + m2, m1 + m2);
        v.view_mut((0, 0), (m1, m1)).copy_from(&self.v11);
        v.view_mut((m1, 0), (m2, m1)).copy_from(&self.v21);
        v.view_mut((m1, m1), (m2, m2)).copy_from(&self.v22);
        v
    }

    pub fn reconstruct(&self) -> Mat {
        let (m1, m2) = (self.v11.nrows(), self.v22.nrows());
        let mut sig = Mat::identity(m1 + m2, m1 + m2);
        for i in 0..m1 {
            sig[(i, i)] = -1.0;
        }
        let v = self.v();
        v.transpose() * sig * v
    }
}

/// Signature factorization of a weight in the leader-concave / follower-convex regime.
pub fn factorize_signature(w: &BlockWeight) -> Result<VFactor> {
    let r22 = w.r22();
    let m22 = min_eig(&r22);
    if !(m22 > EPS_SIGN) {
        return Err(Error::Factorization { t: w.t, reason: format!("R22 margin {m22:.3e} is not positive") });
    }
    let sharp = schur22(w)?;
    let top = max_eig(&sharp);
    if !(top < -EPS_SIGN) {
        return Err(Error::Factorization {
            t: w.t,
            reason: format!("Schur complement max eigenvalue {top:.3e} is not negative"),
        });
    }
    let v22 = sqrt_spd(&r22).expect("positive definite");
    let v22_inv = inv_sqrt_spd(&r22).expect("positive definite");
    let v21 = v22_inv * w.r12().transpose();
    let v11 = sqrt_spd(&(-sharp)).expect("positive definite");
    Ok(VFactor { v11, v21, v22 })
}

// ------------------------------------------------------------------ regimes

/// Sign regimes of the block weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `ℝ ≥ γI` and `ℝ̂ ≥ γI`.
    UniformConvex,
    /// `ℝ11 > 0`, `ℝ22 < 0` (and hatted).
    BlockSign,
    /// `ℝ22 > 0`, `ℝ♯ < 0` (and hatted).
    Stackelberg,
    /// `ℝ ≤ -γI` and `ℝ̂ ≤ -γI`.
    UniformConcave,
    /// The leader/follower regime after exchanging the players.
    SwappedStackelberg,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::UniformConvex,
        Regime::BlockSign,
        Regime::Stackelberg,
        Regime::UniformConcave,
        Regime::SwappedStackelberg,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Regime::UniformConvex => "uniform_convex",
            Regime::BlockSign => "block_sign",
            Regime::Stackelberg => "stackelberg",
            Regime::UniformConcave => "uniform_concave",
            Regime::SwappedStackelberg => "swapped_stackelberg",
        }
    }
}

/// Eigenvalue extremes of one weight matrix and its blocks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightMargins {
    pub min_full: f64,
    pub max_full: f64,
    pub min_11: f64,
    pub max_11: f64,
    pub min_22: f64,
    pub max_22: f64,
    /// Largest eigenvalue of `ℝ11 - ℝ12 ℝ22⁻¹ ℝ12ᵀ`.
    pub sharp_max: Option<f64>,
    /// Largest eigenvalue of `ℝ22 - ℝ12ᵀ ℝ11⁻¹ ℝ12`.
    pub swapped_sharp_max: Option<f64>,
}

impl WeightMargins {
    pub fn of(full: &Mat, partition: Option<usize>) -> Self {
        let ev = sym_eigenvalues(full);
        let (min_full, max_full) = (ev[0], ev[ev.len() - 1]);
        let nan = f64::NAN;
        let mut out = WeightMargins {
            min_full,
            max_full,
            min_11: nan,
            max_11: nan,
            min_22: nan,
            max_22: nan,
            sharp_max: None,
            swapped_sharp_max: None,
        };
        if let Some(m1) = partition {
            let w = BlockWeight { t: 0.0, full: full.clone(), m1 };
            let (e11, e22) = (sym_eigenvalues(&w.r11()), sym_eigenvalues(&w.r22()));
            out.min_11 = e11[0];
            out.max_11 = e11[e11.len() - 1];
            out.min_22 = e22[0];
            out.max_22 = e22[e22.len() - 1];
            out.sharp_max = schur22(&w).ok().map(|s| max_eig(&s));
            out.swapped_sharp_max = schur11(&w).ok().map(|s| max_eig(&s));
        }
        out
    }

    /// Signed margin of a regime: positive means the regime holds here.
    pub fn margin(&self, regime: Regime) -> f64 {
        let or_neg_inf = |x: f64| if x.is_nan() { f64::NEG_INFINITY } else { x };
        match regime {
            Regime::UniformConvex => self.min_full,
            Regime::UniformConcave => -self.max_full,
            Regime::BlockSign => or_neg_inf(self.min_11.min(-self.max_22)),
            Regime::Stackelberg => {
                or_neg_inf(self.min_22).min(self.sharp_max.map_or(f64::NEG_INFINITY, |s| -s))
            }
            Regime::SwappedStackelberg => {
                or_neg_inf(self.min_11).min(self.swapped_sharp_max.map_or(f64::NEG_INFINITY, |s| -s))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignSample {
    pub t: f64,
    pub base: WeightMargins,
    pub hat: WeightMargins,
}

impl SignSample {
    pub fn margin(&self, regime: Regime) -> f64 {
        self.base.margin(regime).min(self.hat.margin(regime))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: Regime,
    pub holds: bool,
    /// Worst margin of the base weight over the computed interval.
    pub base_margin: f64,
    /// Worst margin of the hatted weight over the computed interval.
    pub hat_margin: f64,
}

/// Per-time margins of the monitored weights, ascending in time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignReport {
    pub m1: Option<usize>,
    pub samples: Vec<SignSample>,
    /// Margins at the point that stopped the integration, if any.
    pub rejected: Option<SignSample>,
}

impl SignReport {
    pub fn summary(&self, regime: Regime) -> RegimeSummary {
        let base = self.samples.iter().map(|s| s.base.margin(regime)).fold(f64::INFINITY, f64::min);
        let hat = self.samples.iter().map(|s| s.hat.margin(regime)).fold(f64::INFINITY, f64::min);
        let holds = !self.samples.is_empty() && base > EPS_SIGN && hat > EPS_SIGN;
        RegimeSummary { regime, holds, base_margin: base, hat_margin: hat }
    }

    pub fn holds(&self, regime: Regime) -> bool {
        self.summary(regime).holds
    }

    pub fn summaries(&self) -> Vec<RegimeSummary> {
        Regime::ALL.iter().map(|r| self.summary(*r)).collect()
    }
}

/// Weights evaluated on the solution at each accepted grid point.
#[derive(Debug, Clone)]
pub struct RegimeMonitor {
    pub base: WeightSpec,
    pub hat: WeightSpec,
    pub m1: Option<usize>,
    /// Regimes whose loss stops the integration.
    pub stop_on: Vec<Regime>,
}

impl RegimeMonitor {
    /// Monitors `ℝ(t, X)` and `ℝ̂(t, X)` of a problem.
    pub fn for_problem(lq: &LqProblem, m1: Option<usize>, stop_on: Vec<Regime>) -> Self {
        let h = lq.hatted();
        Self {
            base: WeightSpec { b: lq.b.clone(), r: lq.r.clone() },
            hat: WeightSpec { b: h.b, r: h.r },
            m1,
            stop_on,
        }
    }

    pub fn sample(&self, t: f64, x: &Mat) -> SignSample {
        SignSample {
            t,
            base: WeightMargins::of(&self.base.weight(t, x), self.m1),
            hat: WeightMargins::of(&self.hat.weight(t, x), self.m1),
        }
    }
}

// --------------------------------------------------------------- integration

struct RhsEval {
    value: Mat,
    inertia: Inertia,
}

enum RhsFailure {
    Singular { min_abs_eig: f64, condition: f64 },
    Reference,
}

fn rhs_eval(k: &RiccatiKernel<'_>, y: &Mat, t: f64) -> std::result::Result<RhsEval, RhsFailure> {
    let w = match k.source {
        WeightSource::SelfWeight => y.clone(),
        WeightSource::External(x) => x.eval(t).map_err(|_| RhsFailure::Reference)?,
    };
    let a0 = k.a[0].eval(t);
    let b0 = k.b[0].eval(t);
    let mut inner = k.r.eval(t);
    let mut cross = y * &b0 + k.s.eval(t);
    let mut base = a0.transpose() * y + y * &a0 + k.q.eval(t);
    for j in 1..k.a.len() {
        let aj = k.a[j].eval(t);
        let bj = k.b[j].eval(t);
        let wa = &w * &aj;
        let wb = &w * &bj;
        inner += bj.transpose() * &wb;
        cross += aj.transpose() * &wb;
        base += aj.transpose() * wa;
    }
    let inner = symmetrize(&inner);
    let ev = sym_eigenvalues(&inner);
    let lo = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let hi = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let condition = if lo == 0.0 { f64::INFINITY } else { hi / lo };
    if !(condition <= KAPPA_MAX) {
        return Err(RhsFailure::Singular { min_abs_eig: lo, condition });
    }
    let f = SymIndefinite::new(&inner);
    let sol = f.solve(&cross.transpose()).ok_or(RhsFailure::Singular { min_abs_eig: lo, condition })?;
    let value = symmetrize(&(base - cross * sol));
    Ok(RhsEval { value, inertia: f.inertia() })
}

/// Right-hand side of the unified Riccati equation; `dY/dt = -riccati_rhs`.
pub fn riccati_rhs(k: &RiccatiKernel<'_>, y: &Mat, t: f64) -> Result<Mat> {
    rhs_eval(k, y, t).map(|e| e.value).map_err(|e| match e {
        RhsFailure::Singular { min_abs_eig, .. } => Error::Factorization {
            t,
            reason: format!("inner matrix singular (min |eigenvalue| {min_abs_eig:.3e})"),
        },
        RhsFailure::Reference => Error::Shape(format!("external weight undefined at t = {t}")),
    })
}

fn stop_reason(f: RhsFailure) -> StopReason {
    match f {
        RhsFailure::Singular { min_abs_eig, condition } => StopReason::SingularInner { min_abs_eig, condition },
        RhsFailure::Reference => StopReason::ReferenceTruncated,
    }
}

/// Integrates backward from `T` with step `h`, optionally monitoring regimes.
pub fn integrate_tvp(
    k: &RiccatiKernel<'_>,
    h: f64,
    monitor: Option<&RegimeMonitor>,
) -> Result<(RiccatiTrajectory, Option<SignReport>)> {
    k.validate()?;
    let horizon = k.horizon();
    let grid = UniformGrid::with_step(horizon, h).ok_or(Error::InvalidStep { step: h, horizon })?;
    if let WeightSource::External(x) = k.source {
        if x.grid().horizon != horizon || !x.is_global() {
            return Err(Error::Shape(format!(
                "external weight covers [{}, {}], integration needs [0, {horizon}]",
                x.t_min(),
                x.grid().horizon
            )));
        }
    }
    Ok(integrate_on(k, grid, 0, monitor))
}

/// Core loop; integrates down to grid index `lowest` at most.
pub(crate) fn integrate_on(
    k: &RiccatiKernel<'_>,
    grid: UniformGrid,
    lowest: usize,
    monitor: Option<&RegimeMonitor>,
) -> (RiccatiTrajectory, Option<SignReport>) {
    let n = grid.steps;
    let h = grid.step();
    let half = grid.halved();
    let mut values = vec![k.terminal.clone()];
    let mut derivs = Vec::new();
    let mut report = monitor.map(|m| SignReport { m1: m.m1, samples: Vec::new(), rejected: None });
    let mut termination = Termination::Global;

    let finish = |mut values: Vec<Mat>, mut derivs: Vec<Mat>, termination, report: Option<SignReport>| {
        values.reverse();
        derivs.reverse();
        let first = n + 1 - values.len();
        let report = report.map(|mut r: SignReport| {
            r.samples.reverse();
            r
        });
        (RiccatiTrajectory { grid, first, values, derivs, termination }, report)
    };

    // terminal point
    let mut k1 = match rhs_eval(k, &k.terminal, grid.horizon) {
        Ok(e) => e,
        Err(f) => {
            let termination = Termination::Singular { t_star: grid.horizon, reason: stop_reason(f) };
            derivs.push(Mat::zeros(k.n(), k.n()));
            return finish(values, derivs, termination, report);
        }
    };
    derivs.push(-&k1.value);
    if let (Some(m), Some(rep)) = (monitor, report.as_mut()) {
        let s = m.sample(grid.horizon, &k.terminal);
        if let Some((regime, margin)) = m.stop_on.iter().map(|r| (*r, s.margin(*r))).find(|(_, g)| !(*g > EPS_SIGN)) {
            rep.rejected = Some(s);
            let termination =
                Termination::Singular { t_star: grid.horizon, reason: StopReason::RegimeLost { regime, margin } };
            return finish(values, derivs, termination, report);
        }
        rep.samples.push(s);
    }

    let mut y = k.terminal.clone();
    for i in (lowest + 1..=n).rev() {
        let t_mid = half.time(2 * i - 1);
        let t_lo = grid.time(i - 1);
        let inertia = k1.inertia;
        let stage = |y_stage: &Mat, t: f64| -> std::result::Result<RhsEval, StopReason> {
            let e = rhs_eval(k, y_stage, t).map_err(stop_reason)?;
            if e.inertia != inertia {
                return Err(StopReason::InertiaChange);
            }
            Ok(e)
        };
        let step = (|| {
            let k2 = stage(&(&y + &k1.value * (0.5 * h)), t_mid).map_err(|r| (t_mid, r))?;
            let k3 = stage(&(&y + &k2.value * (0.5 * h)), t_mid).map_err(|r| (t_mid, r))?;
            let k4 = stage(&(&y + &k3.value * h), t_lo).map_err(|r| (t_lo, r))?;
            let incr = (&k1.value + &k2.value * 2.0 + &k3.value * 2.0 + &k4.value) * (h / 6.0);
            let next = symmetrize(&(&y + &incr));
            let norm = max_abs(&next);
            if has_non_finite(&next) || norm > NORM_MAX {
                return Err((t_lo, StopReason::BlowUp { norm }));
            }
            let rel = max_abs(&incr) / max_abs(&y).max(1.0);
            if rel > 1.0 {
                return Err((t_lo, StopReason::FiniteEscape { relative_change: rel }));
            }
            let e = stage(&next, t_lo).map_err(|r| (t_lo, r))?;
            Ok((next, e))
        })();
        match step {
            Err((t_star, reason)) => {
                termination = Termination::Singular { t_star, reason };
                break;
            }
            Ok((next, e)) => {
                if let (Some(m), Some(rep)) = (monitor, report.as_mut()) {
                    let s = m.sample(t_lo, &next);
                    if let Some((regime, margin)) =
                        m.stop_on.iter().map(|r| (*r, s.margin(*r))).find(|(_, g)| !(*g > EPS_SIGN))
                    {
                        rep.rejected = Some(s);
                        termination =
                            Termination::Singular { t_star: t_lo, reason: StopReason::RegimeLost { regime, margin } };
                        break;
                    }
                    rep.samples.push(s);
                }
                derivs.push(-&e.value);
                values.push(next.clone());
                y = next;
                k1 = e;
            }
        }
    }
    if matches!(termination, Termination::Global) && lowest > 0 {
        termination = Termination::Singular { t_star: grid.time(lowest), reason: StopReason::ReferenceTruncated };
    }
    finish(values, derivs, termination, report)
}

/// Solutions of the coupled pair `(X, X̂)` with the sign report on `X`.
#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub x: RiccatiTrajectory,
    pub xhat: RiccatiTrajectory,
    pub report: SignReport,
}

impl CoupledSolution {
    pub fn is_global(&self) -> bool {
        self.x.is_global() && self.xhat.is_global()
    }

    pub fn regime_holds(&self, regime: Regime) -> bool {
        self.report.holds(regime)
    }
}

/// Solves `X` (self-weighted) and then `X̂` (hatted, weighted by `X`).
///
/// Truncations are reported in the trajectories' terminations; they are
/// not errors. `stop_on` lists regimes whose loss should stop the `X` solve.
pub fn solve_coupled_lq(lq: &LqProblem, m1: Option<usize>, h: f64, stop_on: &[Regime]) -> Result<CoupledSolution> {
    let grid = UniformGrid::with_step(lq.horizon, h).ok_or(Error::InvalidStep { step: h, horizon: lq.horizon })?;
    let monitor = RegimeMonitor::for_problem(lq, m1, stop_on.to_vec());
    let kx = RiccatiKernel::base(lq);
    kx.validate()?;
    let (x, report) = integrate_on(&kx, grid, 0, Some(&monitor));
    let hatted = lq.hatted();
    let kh = RiccatiKernel::mean(&hatted, &x);
    let (xhat, _) = integrate_on(&kh, grid, x.first_index(), None);
    Ok(CoupledSolution { x, xhat, report: report.expect("monitor attached") })
}

/// [`solve_coupled_lq`] for a game, monitoring all regimes without stopping on any.
pub fn solve_coupled(p: &GameProblem, h: f64) -> Result<CoupledSolution> {
    solve_coupled_lq(&p.lq, Some(p.m1), h, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn scalar_kernel(a: f64, b: f64, q: f64, rho: f64, g: f64) -> RiccatiKernel<'static> {
        let c = |v: f64, r: usize, cc: usize| Schedule::constant(Mat::from_element(r, cc, v), 1.0);
        RiccatiKernel {
            a: vec![c(a, 1, 1)],
            b: vec![c(b, 1, 1)],
            q: c(q, 1, 1),
            s: c(0.0, 1, 1),
            r: c(rho, 1, 1),
            terminal: scalar(g),
            source: WeightSource::SelfWeight,
        }
    }

    #[test]
    fn scalar_rhs_formula() {
        let k = scalar_kernel(1.0, 1.0, 1.0, 1.0, 0.0);
        assert!((riccati_rhs(&k, &scalar(1.0), 0.5).unwrap()[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_kernel_stays_zero() {
        let k = scalar_kernel(0.3, 1.0, 0.0, 1.0, 0.0);
        let (y, _) = integrate_tvp(&k, 0.01, None).unwrap();
        assert!(y.is_global());
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn rejects_step_that_does_not_divide() {
        let k = scalar_kernel(0.0, 1.0, 0.0, 1.0, 0.0);
        assert!(matches!(integrate_tvp(&k, 0.3, None), Err(Error::InvalidStep { .. })));
    }

    #[test]
    fn hermite_output_is_fourth_order() {
        // y' = y² with y(1) = 1, so y = 1/(2 - t)
        let k = scalar_kernel(0.0, 1.0, 0.0, 1.0, 1.0);
        let (y, _) = integrate_tvp(&k, 1e-2, None).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..100 {
            let t = 0.003 + i as f64 * 0.00997;
            worst = worst.max((y.eval(t).unwrap()[(0, 0)] - 1.0 / (2.0 - t)).abs());
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn finite_escape_is_detected() {
        // y' = y² with y(1) = -2, so y = 1/(0.5 - t) escapes at t = 0.5
        let k = scalar_kernel(0.0, 1.0, 0.0, 1.0, -2.0);
        let (y, _) = integrate_tvp(&k, 1e-3, None).unwrap();
        assert!(!y.is_global());
        assert!(y.t_min() > 0.49 && y.t_min() < 0.6, "{}", y.t_min());
    }

    #[test]
    fn block_weight_and_schur_examples() {
        let mut lq = LqProblem::zeros(1, 2, 1, 1.0);
        lq.b[1] = Schedule::constant(Mat::from_row_slice(1, 2, &[1.0, 2.0]), 1.0);
        let p = GameProblem::new(lq, 1, 1).unwrap();
        let w = block_weight(&p, &scalar(3.0), 0.2, false);
        assert_eq!(w.full, Mat::from_row_slice(2, 2, &[3.0, 6.0, 6.0, 12.0]));
        let w = BlockWeight { t: 0.0, full: Mat::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]), m1: 1 };
        assert!((schur22(&w).unwrap()[(0, 0)] - 2.0).abs() < 1e-15);
        let w = BlockWeight { t: 0.0, full: Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0 / 3.0]), m1: 1 };
        assert_eq!(schur22(&w).unwrap()[(0, 0)], 1.0);
        let w = BlockWeight { t: 0.7, full: Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]), m1: 1 };
        assert!(schur22(&w).is_err());
    }

    #[test]
    fn margins() {
        assert_eq!(definiteness_margin(&Mat::identity(2, 2)), 1.0);
        assert!((definiteness_margin(&Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0 / 3.0])) + 2.0 / 3.0).abs() < 1e-15);
        assert!((definiteness_margin(&Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0])) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn factorization_examples() {
        let w = BlockWeight { t: 0.0, full: Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]), m1: 1 };
        let v = factorize_signature(&w).unwrap();
        assert_eq!((v.v11[(0, 0)], v.v21[(0, 0)], v.v22[(0, 0)]), (1.0, 0.0, 1.0));
        let w = BlockWeight { t: 0.0, full: Mat::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, 4.0]), m1: 1 };
        let v = factorize_signature(&w).unwrap();
        assert!((v.v22[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((v.v21[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((v.v11[(0, 0)] - 1.5).abs() < 1e-14);
        assert!(crate::linalg::max_abs_diff(&v.reconstruct(), &w.full) < 1e-14);
        let bad = BlockWeight { t: 0.3, full: Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), m1: 1 };
        assert!(factorize_signature(&bad).is_err());
    }
}
