//! Closed-loop reductions and the certificate checks built on them.
//!
//! Closing the follower with `u2 = K x + W u1 + (K̂-K)E[x] + (Ŵ-W)E[u1]`
//! leaves a one-player problem in `u1` whose uniform concavity is decided by
//! a Riccati pair `(Y, Ŷ)`. Closing the leader with
//! `u1 = Φ x + (Φ̂-Φ)E[x]` leaves a problem in `u2` whose uniform convexity
//! is decided by `(Υ, Υ̂)`. Both reductions are plain [`LqProblem`]s, so the
//! same integrator and sign monitors apply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eig, Mat};
use crate::problem::{GameProblem, LqProblem};
use crate::riccati::{solve_coupled_lq, CoupledSolution, Regime, RiccatiTrajectory, Termination};
use crate::schedule::{MatFn, Schedule, UniformGrid};
use crate::simulate::ControlSpec;
use crate::synthesis::{build_gains_clamped, ResponseMap};

/// Tolerance of the comparison orderings.
pub const COMPARISON_TOL: f64 = -1e-8;

fn sampled(times: &[f64], f: impl Fn(f64) -> Mat) -> Schedule {
    Schedule::sample(times, f)
}

fn cols(m: &Mat, c0: usize, nc: usize) -> Mat {
    m.columns(c0, nc).into_owned()
}

fn block(m: &Mat, r0: usize, c0: usize, nr: usize, nc: usize) -> Mat {
    m.view((r0, c0), (nr, nc)).into_owned()
}

/// Sample times for transformed coefficients: the half-step grid for `h`.
pub fn transform_times(horizon: f64, h: f64) -> Result<Vec<f64>> {
    let g = UniformGrid::with_step(horizon, h).ok_or(Error::InvalidStep { step: h, horizon })?;
    Ok(g.halved().times())
}

/// The follower-closed problem (input `u1`, dimension `m1`).
#[derive(Debug, Clone)]
pub struct ClosedU2Transform {
    pub problem: LqProblem,
}

/// Closes player 2 with `(K, W, K̂, Ŵ)`; coefficients sampled on `times`.
pub fn transform_close_u2(
    p: &GameProblem,
    k: &Schedule,
    w: &Schedule,
    khat: &Schedule,
    what: &Schedule,
    times: &[f64],
) -> Result<ClosedU2Transform> {
    let (n, m1, m2, r) = (p.n(), p.m1, p.m2, p.lq.noise_dim);
    for (name, s, shape) in [("K", k, (m2, n)), ("W", w, (m2, m1)), ("Khat", khat, (m2, n)), ("What", what, (m2, m1))] {
        if s.shape() != shape {
            return Err(Error::Shape(format!("{name} is {:?}, expected {:?}", s.shape(), shape)));
        }
    }
    let lq = &p.lq;
    let hat = lq.hatted();
    // sandwich helpers
    let a_k = |a: &Mat, b: &Mat, k: &Mat| a + cols(b, m1, m2) * k;
    let b_w = |b: &Mat, w: &Mat| cols(b, 0, m1) + cols(b, m1, m2) * w;
    let m_k = |q: &Mat, s: &Mat, r: &Mat, k: &Mat| {
        let l2 = cols(s, m1, m2);
        let r22 = block(r, m1, m1, m2, m2);
        crate::linalg::symmetrize(&(q + &l2 * k + k.transpose() * l2.transpose() + k.transpose() * r22 * k))
    };
    let l_kw = |s: &Mat, r: &Mat, k: &Mat, w: &Mat| {
        let (l1, l2) = (cols(s, 0, m1), cols(s, m1, m2));
        let (r12, r22) = (block(r, 0, m1, m1, m2), block(r, m1, m1, m2, m2));
        l1 + l2 * w + k.transpose() * r12.transpose() + k.transpose() * r22 * w
    };
    let r_w = |r: &Mat, w: &Mat| {
        let r11 = block(r, 0, 0, m1, m1);
        let r12 = block(r, 0, m1, m1, m2);
        let r22 = block(r, m1, m1, m2, m2);
        crate::linalg::symmetrize(&(r11 + &r12 * w + w.transpose() * r12.transpose() + w.transpose() * r22 * w))
    };
    let mut a = Vec::with_capacity(r + 1);
    let mut a_bar = Vec::with_capacity(r + 1);
    let mut b = Vec::with_capacity(r + 1);
    let mut b_bar = Vec::with_capacity(r + 1);
    for j in 0..=r {
        let base = sampled(times, |t| a_k(&lq.a[j].eval(t), &lq.b[j].eval(t), &k.eval(t)));
        let hatted = sampled(times, |t| a_k(&hat.a[j].eval(t), &hat.b[j].eval(t), &khat.eval(t)));
        a_bar.push(hatted.zip_with(&base, |x, y| x - y));
        a.push(base);
        let base = sampled(times, |t| b_w(&lq.b[j].eval(t), &w.eval(t)));
        let hatted = sampled(times, |t| b_w(&hat.b[j].eval(t), &what.eval(t)));
        b_bar.push(hatted.zip_with(&base, |x, y| x - y));
        b.push(base);
    }
    let q = sampled(times, |t| m_k(&lq.q.eval(t), &lq.s.eval(t), &lq.r.eval(t), &k.eval(t)));
    let qh = sampled(times, |t| m_k(&hat.q.eval(t), &hat.s.eval(t), &hat.r.eval(t), &khat.eval(t)));
    let s = sampled(times, |t| l_kw(&lq.s.eval(t), &lq.r.eval(t), &k.eval(t), &w.eval(t)));
    let sh = sampled(times, |t| l_kw(&hat.s.eval(t), &hat.r.eval(t), &khat.eval(t), &what.eval(t)));
    let rr = sampled(times, |t| r_w(&lq.r.eval(t), &w.eval(t)));
    let rh = sampled(times, |t| r_w(&hat.r.eval(t), &what.eval(t)));
    let problem = LqProblem {
        n,
        m: m1,
        noise_dim: r,
        horizon: lq.horizon,
        a,
        a_bar,
        b,
        b_bar,
        q_bar: qh.zip_with(&q, |x, y| x - y),
        q,
        s_bar: sh.zip_with(&s, |x, y| x - y),
        s,
        r_bar: rh.zip_with(&rr, |x, y| x - y),
        r: rr,
        g: lq.g.clone(),
        g_bar: lq.g_bar.clone(),
    };
    Ok(ClosedU2Transform { problem: problem.validated()? })
}

/// Sign of the `Φᵀ R12` term in the leader-closed cross weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSign {
    /// `L2 + Φᵀ R12`, obtained by substituting `u1 = Φ x` into the cost.
    Derived,
    /// `L2 - Φᵀ R12`, the form as printed in the source formulas.
    AsPrinted,
}

/// The leader-closed problem (input `u2`, dimension `m2`).
#[derive(Debug, Clone)]
pub struct ClosedU1Transform {
    pub problem: LqProblem,
    pub link_sign: LinkSign,
    /// Largest quadratic-form mismatch of each sign variant against direct substitution.
    pub derived_mismatch: f64,
    pub printed_mismatch: f64,
}

/// Closes player 1 with `(Φ, Φ̂)`; the cross-term sign is chosen by the
/// quadratic-form oracle.
pub fn transform_close_u1(p: &GameProblem, phi: &Schedule, phihat: &Schedule, times: &[f64]) -> Result<ClosedU1Transform> {
    let derived = transform_close_u1_with(p, phi, phihat, times, LinkSign::Derived)?;
    let printed = transform_close_u1_with(p, phi, phihat, times, LinkSign::AsPrinted)?;
    let dm = substitution_mismatch(p, phi, phihat, &derived.problem, times);
    let pm = substitution_mismatch(p, phi, phihat, &printed.problem, times);
    let mut out = if dm <= pm { derived } else { printed };
    out.derived_mismatch = dm;
    out.printed_mismatch = pm;
    Ok(out)
}

/// Closes player 1 with an explicit cross-term sign.
pub fn transform_close_u1_with(
    p: &GameProblem,
    phi: &Schedule,
    phihat: &Schedule,
    times: &[f64],
    sign: LinkSign,
) -> Result<ClosedU1Transform> {
    let (n, m1, m2, r) = (p.n(), p.m1, p.m2, p.lq.noise_dim);
    for (name, s) in [("Phi", phi), ("Phihat", phihat)] {
        if s.shape() != (m1, n) {
            return Err(Error::Shape(format!("{name} is {:?}, expected {:?}", s.shape(), (m1, n))));
        }
    }
    let lq = &p.lq;
    let hat = lq.hatted();
    let sgn = match sign {
        LinkSign::Derived => 1.0,
        LinkSign::AsPrinted => -1.0,
    };
    let a_phi = |a: &Mat, b: &Mat, f: &Mat| a + cols(b, 0, m1) * f;
    let m_phi = |q: &Mat, s: &Mat, rr: &Mat, f: &Mat| {
        let l1 = cols(s, 0, m1);
        let r11 = block(rr, 0, 0, m1, m1);
        crate::linalg::symmetrize(&(q + &l1 * f + f.transpose() * l1.transpose() + f.transpose() * r11 * f))
    };
    let l_phi = |s: &Mat, rr: &Mat, f: &Mat| cols(s, m1, m2) + f.transpose() * block(rr, 0, m1, m1, m2) * sgn;
    let mut a = Vec::with_capacity(r + 1);
    let mut a_bar = Vec::with_capacity(r + 1);
    let mut b = Vec::with_capacity(r + 1);
    let mut b_bar = Vec::with_capacity(r + 1);
    for j in 0..=r {
        let base = sampled(times, |t| a_phi(&lq.a[j].eval(t), &lq.b[j].eval(t), &phi.eval(t)));
        let hatted = sampled(times, |t| a_phi(&hat.a[j].eval(t), &hat.b[j].eval(t), &phihat.eval(t)));
        a_bar.push(hatted.zip_with(&base, |x, y| x - y));
        a.push(base);
        b.push(sampled(times, |t| cols(&lq.b[j].eval(t), m1, m2)));
        b_bar.push(sampled(times, |t| cols(&lq.b_bar[j].eval(t), m1, m2)));
    }
    let q = sampled(times, |t| m_phi(&lq.q.eval(t), &lq.s.eval(t), &lq.r.eval(t), &phi.eval(t)));
    let qh = sampled(times, |t| m_phi(&hat.q.eval(t), &hat.s.eval(t), &hat.r.eval(t), &phihat.eval(t)));
    let s = sampled(times, |t| l_phi(&lq.s.eval(t), &lq.r.eval(t), &phi.eval(t)));
    let sh = sampled(times, |t| l_phi(&hat.s.eval(t), &hat.r.eval(t), &phihat.eval(t)));
    let problem = LqProblem {
        n,
        m: m2,
        noise_dim: r,
        horizon: lq.horizon,
        a,
        a_bar,
        b,
        b_bar,
        q_bar: qh.zip_with(&q, |x, y| x - y),
        q,
        s_bar: sh.zip_with(&s, |x, y| x - y),
        s,
        r: sampled(times, |t| block(&lq.r.eval(t), m1, m1, m2, m2)),
        r_bar: sampled(times, |t| block(&lq.r_bar.eval(t), m1, m1, m2, m2)),
        g: lq.g.clone(),
        g_bar: lq.g_bar.clone(),
    };
    Ok(ClosedU1Transform { problem: problem.validated()?, link_sign: sign, derived_mismatch: f64::NAN, printed_mismatch: f64::NAN })
}

/// Compares the running cost of the original problem under `u1 = Φx` with
/// the reduced problem's running cost on fixed probe vectors.
fn substitution_mismatch(p: &GameProblem, phi: &Schedule, phihat: &Schedule, red: &LqProblem, times: &[f64]) -> f64 {
    let (n, m1, m2) = (p.n(), p.m1, p.m2);
    let hat = p.hatted();
    let rh = red.hatted();
    let mut worst: f64 = 0.0;
    let stride = (times.len() / 7).max(1);
    for (idx, &t) in times.iter().enumerate().step_by(stride) {
        for probe in 0..4 {
            let x = Mat::from_fn(n, 1, |i, _| ((i + 1 + probe + idx) as f64 * 0.7).sin());
            let v = Mat::from_fn(m2, 1, |i, _| ((i + 2 + 3 * probe) as f64 * 1.3).cos());
            for (q, s, r, f, rq, rs, rr) in [
                (p.lq.q.eval(t), p.lq.s.eval(t), p.lq.r.eval(t), phi.eval(t), red.q.eval(t), red.s.eval(t), red.r.eval(t)),
                (hat.q.eval(t), hat.s.eval(t), hat.r.eval(t), phihat.eval(t), rh.q.eval(t), rh.s.eval(t), rh.r.eval(t)),
            ] {
                let u1 = &f * &x;
                let mut u = Mat::zeros(m1 + m2, 1);
                u.rows_mut(0, m1).copy_from(&u1);
                u.rows_mut(m1, m2).copy_from(&v);
                let full = (x.transpose() * &q * &x + x.transpose() * &s * &u * 2.0 + u.transpose() * &r * &u)[(0, 0)];
                let reduced = (x.transpose() * &rq * &x + x.transpose() * &rs * &v * 2.0 + v.transpose() * &rr * &v)[(0, 0)];
                worst = worst.max((full - reduced).abs());
            }
        }
    }
    worst
}

/// Joint control of the original game obtained by closing player 1 with `(Φ, Φ̂)`.
pub fn substitute_u1(phi: &Schedule, phihat: &Schedule, u2: &ControlSpec) -> ControlSpec {
    let (m1, _) = phi.shape();
    let r = u2.noise_gain.shape().1;
    let u1 = ControlSpec {
        fluct_gain: MatFn::from_schedule(phi),
        noise_gain: MatFn::zeros(m1, r),
        mean_gain: MatFn::from_schedule(phihat),
        offset: MatFn::zeros(m1, 1),
    };
    u1.stack(u2)
}

/// Joint control obtained by closing player 2 with `(K, W, K̂, Ŵ)`.
pub fn substitute_u2(resp: &ResponseMap, u1: &ControlSpec) -> ControlSpec {
    crate::synthesis::follower_response(resp, u1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    C1,
    C2,
    C3,
    UniformConvex,
    UniformConcave,
}

#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub condition: Condition,
    pub holds: bool,
    /// Worst margin of the base weight condition over the computed interval.
    pub margin: f64,
    /// Worst margin of the hatted weight condition.
    pub hat_margin: f64,
    /// The auxiliary pair `(Y, Ŷ)` or `(Υ, Υ̂)` (or `(X, X̂)` for the global tests).
    pub witness: CoupledSolution,
    /// Why the check failed, when it did.
    pub failure: Option<String>,
}

/// Serializable digest of a [`ConditionReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub holds: bool,
    pub margin: f64,
    pub hat_margin: f64,
    /// Lowest time reached by the auxiliary pair.
    pub t_min: f64,
    pub failure: Option<String>,
}

impl From<&ConditionReport> for ConditionSummary {
    fn from(r: &ConditionReport) -> Self {
        Self {
            condition: r.condition,
            holds: r.holds,
            margin: r.margin,
            hat_margin: r.hat_margin,
            t_min: r.witness.x.t_min().max(r.witness.xhat.t_min()),
            failure: r.failure.clone(),
        }
    }
}

fn decide(condition: Condition, regime: Regime, witness: CoupledSolution) -> ConditionReport {
    let summary = witness.report.summary(regime);
    let global = witness.is_global();
    let holds = global && summary.holds;
    let failure = if holds {
        None
    } else if !global {
        let term = if witness.x.is_global() { &witness.xhat.termination } else { &witness.x.termination };
        match term {
            Termination::Singular { t_star, reason } => Some(format!("no solution on [0, T]: stopped at t = {t_star} ({reason:?})")),
            Termination::Global => Some("no solution on [0, T]".into()),
        }
    } else {
        Some(format!(
            "sign condition violated: worst margins {:.3e} (base), {:.3e} (hatted)",
            summary.base_margin, summary.hat_margin
        ))
    };
    ConditionReport { condition, holds, margin: summary.base_margin, hat_margin: summary.hat_margin, witness, failure }
}

fn check_c1_labeled(
    p: &GameProblem,
    k: &Schedule,
    w: &Schedule,
    khat: &Schedule,
    what: &Schedule,
    h: f64,
    label: Condition,
) -> Result<ConditionReport> {
    let times = transform_times(p.horizon(), h)?;
    let t = transform_close_u2(p, k, w, khat, what, &times)?;
    let sol = solve_coupled_lq(&t.problem, None, h, &[])?;
    Ok(decide(label, Regime::UniformConcave, sol))
}

/// Uniform concavity of the follower-closed cost.
pub fn check_c1(p: &GameProblem, k: &Schedule, w: &Schedule, khat: &Schedule, what: &Schedule, h: f64) -> Result<ConditionReport> {
    check_c1_labeled(p, k, w, khat, what, h, Condition::C1)
}

/// Uniform convexity of the leader-closed cost.
pub fn check_c2(p: &GameProblem, phi: &Schedule, phihat: &Schedule, h: f64) -> Result<ConditionReport> {
    let times = transform_times(p.horizon(), h)?;
    let t = transform_close_u1(p, phi, phihat, &times)?;
    let sol = solve_coupled_lq(&t.problem, None, h, &[])?;
    Ok(decide(Condition::C2, Regime::UniformConvex, sol))
}

/// [`check_c1`] with `W = Ŵ = 0`.
pub fn check_c3(p: &GameProblem, k: &Schedule, khat: &Schedule, h: f64) -> Result<ConditionReport> {
    let z = Schedule::zeros(p.m2, p.m1, p.horizon());
    check_c1_labeled(p, k, &z, khat, &z, h, Condition::C3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Convex,
    Concave,
}

/// Uniform convexity or concavity of the full cost in `u = (u1, u2)`.
pub fn check_global_convexity(p: &GameProblem, h: f64, direction: Direction) -> Result<ConditionReport> {
    let sol = solve_coupled_lq(&p.lq, Some(p.m1), h, &[])?;
    Ok(match direction {
        Direction::Convex => decide(Condition::UniformConvex, Regime::UniformConvex, sol),
        Direction::Concave => decide(Condition::UniformConcave, Regime::UniformConcave, sol),
    })
}

/// Per-time orderings `Υ ≤ X ≤ Y` and `Υ̂ ≤ X̂ ≤ Ŷ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    pub y_minus_x: Vec<f64>,
    pub x_minus_upsilon: Vec<f64>,
    pub yhat_minus_xhat: Vec<f64>,
    pub xhat_minus_upsilonhat: Vec<f64>,
    pub worst: [f64; 4],
    pub holds: [bool; 4],
    /// Set when the comparison had to be restricted to a common subinterval.
    pub restricted_to: Option<(f64, f64)>,
}

impl ComparisonReport {
    pub fn all_hold(&self) -> bool {
        self.holds.iter().all(|b| *b)
    }
}

fn value_at(tr: &RiccatiTrajectory, i: usize, t: f64, grid: UniformGrid) -> Result<Mat> {
    if tr.grid() == grid {
        Ok(tr.at_index(i).clone())
    } else {
        tr.eval(t)
    }
}

/// Eigenvalue minima of the four ordered differences on the grid of `x`.
pub fn comparison_bounds(
    x: &RiccatiTrajectory,
    xhat: &RiccatiTrajectory,
    c1: &ConditionReport,
    c2: &ConditionReport,
) -> Result<ComparisonReport> {
    let (y, yh) = (&c1.witness.x, &c1.witness.xhat);
    let (u, uh) = (&c2.witness.x, &c2.witness.xhat);
    let lo = [x, xhat, y, yh, u, uh].iter().map(|t| t.t_min()).fold(f64::NEG_INFINITY, f64::max);
    let grid = x.grid();
    let slack = 1e-12 * grid.horizon.max(1.0);
    let restricted_to = if lo > slack { Some((lo, grid.horizon)) } else { None };
    let mut out = ComparisonReport {
        times: vec![],
        y_minus_x: vec![],
        x_minus_upsilon: vec![],
        yhat_minus_xhat: vec![],
        xhat_minus_upsilonhat: vec![],
        worst: [f64::INFINITY; 4],
        holds: [false; 4],
        restricted_to,
    };
    for i in 0..=grid.steps {
        let t = grid.time(i);
        if t < lo - slack {
            continue;
        }
        let xv = value_at(x, i, t, grid)?;
        let xh = value_at(xhat, i, t, grid)?;
        let d = [
            min_eig(&(value_at(y, i, t, grid)? - &xv)),
            min_eig(&(&xv - value_at(u, i, t, grid)?)),
            min_eig(&(value_at(yh, i, t, grid)? - &xh)),
            min_eig(&(&xh - value_at(uh, i, t, grid)?)),
        ];
        out.times.push(t);
        out.y_minus_x.push(d[0]);
        out.x_minus_upsilon.push(d[1]);
        out.yhat_minus_xhat.push(d[2]);
        out.xhat_minus_upsilonhat.push(d[3]);
        for k in 0..4 {
            out.worst[k] = out.worst[k].min(d[k]);
        }
    }
    for k in 0..4 {
        out.holds[k] = !out.times.is_empty() && out.worst[k] >= COMPARISON_TOL;
    }
    Ok(out)
}

/// Which proof construction produces the certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// `K, W` from the signature factorization, `Φ = F1` (closes with feedthrough).
    WithFeedthrough,
    /// `K = F2`, `W = 0`, `Φ = F1`.
    WithoutFeedthrough,
}

/// Certificate functions built from a solved `(X, X̂)`.
#[derive(Debug, Clone)]
pub struct Certificates {
    pub k: Option<Schedule>,
    pub w: Option<Schedule>,
    pub khat: Option<Schedule>,
    pub what: Option<Schedule>,
    pub phi: Schedule,
    pub phihat: Schedule,
    /// Reason the follower certificates are missing.
    pub note: Option<String>,
}

/// Certificates of the given construction; gains are held constant below
/// the point where `X` or `X̂` stopped.
pub fn constructive_certificates(p: &GameProblem, sol: &CoupledSolution, construction: Construction) -> Result<Certificates> {
    let times = sol.x.grid().halved().times();
    let g = build_gains_clamped(p, &sol.x, &sol.xhat, &times)?;
    let (phi, phihat) = (g.phi(), g.phihat());
    Ok(match construction {
        Construction::WithoutFeedthrough => Certificates {
            k: Some(g.f2()),
            w: Some(Schedule::zeros(p.m2, p.m1, p.horizon())),
            khat: Some(g.fhat2()),
            what: Some(Schedule::zeros(p.m2, p.m1, p.horizon())),
            phi,
            phihat,
            note: None,
        },
        Construction::WithFeedthrough => match (g.k(), g.w(), g.khat(), g.what()) {
            (Ok(k), Ok(w), Ok(kh), Ok(wh)) => {
                Certificates { k: Some(k), w: Some(w), khat: Some(kh), what: Some(wh), phi, phihat, note: None }
            }
            _ => Certificates {
                k: None,
                w: None,
                khat: None,
                what: None,
                phi,
                phihat,
                note: g.response_error.clone(),
            },
        },
    })
}

/// Solver verdict next to the two certificate checks.
#[derive(Debug, Clone)]
pub struct RoundTrip {
    pub construction: Construction,
    pub solver_global: bool,
    pub regime_holds: bool,
    /// C1 (with feedthrough) or C3 (without); `None` when certificates are unavailable.
    pub follower_check: Option<ConditionReport>,
    pub leader_check: ConditionReport,
}

impl RoundTrip {
    pub fn solver_side(&self) -> bool {
        self.solver_global && self.regime_holds
    }

    pub fn certificate_side(&self) -> bool {
        self.follower_check.as_ref().is_some_and(|c| c.holds) && self.leader_check.holds
    }

    pub fn consistent(&self) -> bool {
        self.solver_side() == self.certificate_side()
    }
}

/// Solves the game and checks the constructive certificates against it.
///
/// `WithFeedthrough` pairs the leader/follower regime with C1 and C2.
/// `WithoutFeedthrough` pairs the block-sign regime of `p` with C2 and C3;
/// its certificates are built and checked with the roles exchanged.
pub fn certificate_round_trip(p: &GameProblem, h: f64, construction: Construction) -> Result<RoundTrip> {
    let sol = crate::riccati::solve_coupled(p, h)?;
    let (regime, frame) = match construction {
        Construction::WithFeedthrough => (Regime::Stackelberg, p.clone()),
        Construction::WithoutFeedthrough => (Regime::BlockSign, p.swap_roles()),
    };
    let regime_holds = sol.regime_holds(regime);
    let solver_global = sol.is_global();
    let frame_sol = match construction {
        Construction::WithFeedthrough => sol,
        Construction::WithoutFeedthrough => crate::riccati::solve_coupled(&frame, h)?,
    };
    let certs = constructive_certificates(&frame, &frame_sol, construction)?;
    let leader_check = check_c2(&frame, &certs.phi, &certs.phihat, h)?;
    let follower_check = match (&certs.k, &certs.w, &certs.khat, &certs.what) {
        (Some(k), Some(w), Some(kh), Some(wh)) => Some(match construction {
            Construction::WithFeedthrough => check_c1(&frame, k, w, kh, wh, h)?,
            Construction::WithoutFeedthrough => check_c3(&frame, k, kh, h)?,
        }),
        _ => None,
    };
    Ok(RoundTrip { construction, solver_global, regime_holds, follower_check, leader_check })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Schedule {
        Schedule::constant(Mat::from_element(1, 1, v), 1.0)
    }

    #[test]
    fn identity_transforms() {
        let mut lq = LqProblem::zeros(1, 2, 1, 1.0);
        lq.a[0] = c(0.3);
        lq.a[1] = c(0.2);
        lq.b[0] = Schedule::constant(Mat::from_row_slice(1, 2, &[1.0, 2.0]), 1.0);
        lq.b[1] = Schedule::constant(Mat::from_row_slice(1, 2, &[0.5, -0.1]), 1.0);
        lq.q = c(0.7);
        lq.s = Schedule::constant(Mat::from_row_slice(1, 2, &[0.1, 0.4]), 1.0);
        lq.r = Schedule::constant(Mat::from_row_slice(2, 2, &[-1.0, 0.3, 0.3, 2.0]), 1.0);
        let p = GameProblem::new(lq, 1, 1).unwrap();
        let times = transform_times(1.0, 0.25).unwrap();
        let z = c(0.0);
        let t2 = transform_close_u2(&p, &z, &z, &z, &z, &times).unwrap().problem;
        assert_eq!(t2.a[1].eval(0.5)[(0, 0)], 0.2);
        assert_eq!(t2.b[0].eval(0.5)[(0, 0)], 1.0);
        assert_eq!(t2.q.eval(0.5)[(0, 0)], 0.7);
        assert_eq!(t2.s.eval(0.5)[(0, 0)], 0.1);
        assert_eq!(t2.r.eval(0.5)[(0, 0)], -1.0);
        let t1 = transform_close_u1(&p, &z, &z, &times).unwrap();
        assert_eq!(t1.problem.a[0].eval(0.5)[(0, 0)], 0.3);
        assert_eq!(t1.problem.q.eval(0.5)[(0, 0)], 0.7);
        assert_eq!(t1.problem.s.eval(0.5)[(0, 0)], 0.4);
        assert_eq!(t1.problem.r.eval(0.5)[(0, 0)], 2.0);
    }

    #[test]
    fn pure_concave_cost_passes_c1() {
        let mut lq = LqProblem::zeros(1, 2, 0, 1.0);
        lq.r = Schedule::constant(Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]), 1.0);
        let p = GameProblem::new(lq, 1, 1).unwrap();
        let z = c(0.0);
        let rep = check_c1(&p, &z, &z, &z, &z, 0.01).unwrap();
        assert!(rep.holds);
        assert!((rep.margin - 1.0).abs() < 1e-12);
        assert_eq!(rep.witness.x.max_abs(), 0.0);
        let rep = check_c2(&p, &z, &z, 0.01).unwrap();
        assert!(rep.holds);
        assert!((rep.margin - 1.0).abs() < 1e-12);
    }
}
