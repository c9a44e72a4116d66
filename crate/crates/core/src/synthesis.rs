//! Equilibrium feedback gains and strategy laws.
//!
//! With `ℝ = R + Σ B_jᵀ X B_j` and `ℝ̂ = R̂ + Σ B̂_jᵀ X B̂_j` the gains are
//!
//! ```text
//! F = -ℝ⁻¹ (B_0ᵀ X + Σ B_jᵀ X A_j + Sᵀ)
//! F̂ = -ℝ̂⁻¹ (B̂_0ᵀ X̂ + Σ B̂_jᵀ X Â_j + Ŝᵀ)
//! ```
//!
//! and, from the signature factorization of `ℝ`, the follower's reaction
//! `u2 = K x¹ + W u1¹ + K̂ x² + Ŵ u1²` with `K = V22⁻¹V21 F1 + F2`,
//! `W = -V22⁻¹V21` (hatted analogues from `ℝ̂`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_abs_diff, Mat, SymIndefinite};
use crate::problem::GameProblem;
use crate::riccati::{factorize_signature, solve_coupled, BlockWeight, CoupledSolution, Regime, RiccatiTrajectory, VFactor, KAPPA_MAX};
use crate::schedule::{MatFn, Schedule};
use crate::simulate::ControlSpec;

/// Relative tolerance of the stationarity and consistency identities.
pub const GAIN_TOL: f64 = 1e-9;

/// Follower reaction gains with the factors they came from.
#[derive(Debug, Clone)]
pub struct ResponseGains {
    pub k: Vec<Mat>,
    pub w: Vec<Mat>,
    pub khat: Vec<Mat>,
    pub what: Vec<Mat>,
    pub v: Vec<VFactor>,
    pub vhat: Vec<VFactor>,
}

/// Gains sampled on a time grid (by default the half-step Riccati grid).
#[derive(Debug, Clone)]
pub struct GainSchedule {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub times: Vec<f64>,
    pub f: Vec<Mat>,
    pub fhat: Vec<Mat>,
    pub response: Option<ResponseGains>,
    /// Why the reaction gains are absent.
    pub response_error: Option<String>,
}

fn schedule(times: &[f64], v: &[Mat]) -> Schedule {
    Schedule::new(times.to_vec(), v.to_vec()).expect("gain grid")
}

impl GainSchedule {
    pub fn f_schedule(&self) -> Schedule {
        schedule(&self.times, &self.f)
    }
    pub fn fhat_schedule(&self) -> Schedule {
        schedule(&self.times, &self.fhat)
    }
    pub fn f1(&self) -> Schedule {
        self.f_schedule().block(0, 0, self.m1, self.n)
    }
    pub fn f2(&self) -> Schedule {
        self.f_schedule().block(self.m1, 0, self.m2, self.n)
    }
    pub fn fhat1(&self) -> Schedule {
        self.fhat_schedule().block(0, 0, self.m1, self.n)
    }
    pub fn fhat2(&self) -> Schedule {
        self.fhat_schedule().block(self.m1, 0, self.m2, self.n)
    }
    /// Leader feedback used to close player 1.
    pub fn phi(&self) -> Schedule {
        self.f1()
    }
    pub fn phihat(&self) -> Schedule {
        self.fhat1()
    }

    fn response_ref(&self) -> Result<&ResponseGains> {
        self.response.as_ref().ok_or_else(|| {
            Error::Regime(self.response_error.clone().unwrap_or_else(|| "reaction gains unavailable".into()))
        })
    }

    pub fn k(&self) -> Result<Schedule> {
        Ok(schedule(&self.times, &self.response_ref()?.k))
    }
    pub fn w(&self) -> Result<Schedule> {
        Ok(schedule(&self.times, &self.response_ref()?.w))
    }
    pub fn khat(&self) -> Result<Schedule> {
        Ok(schedule(&self.times, &self.response_ref()?.khat))
    }
    pub fn what(&self) -> Result<Schedule> {
        Ok(schedule(&self.times, &self.response_ref()?.what))
    }
    pub fn v11(&self) -> Result<Schedule> {
        let r = self.response_ref()?;
        Ok(Schedule::new(self.times.clone(), r.v.iter().map(|v| v.v11.clone()).collect()).expect("grid"))
    }
    pub fn vhat11(&self) -> Result<Schedule> {
        let r = self.response_ref()?;
        Ok(Schedule::new(self.times.clone(), r.vhat.iter().map(|v| v.v11.clone()).collect()).expect("grid"))
    }

    /// Largest relative residual of `F2 = K + W F1` and `F̂2 = K̂ + Ŵ F̂1`.
    pub fn consistency_residual(&self) -> Result<f64> {
        let r = self.response_ref()?;
        let (m1, m2, n) = (self.m1, self.m2, self.n);
        let mut worst: f64 = 0.0;
        for i in 0..self.times.len() {
            for (f, k, w) in [(&self.f[i], &r.k[i], &r.w[i]), (&self.fhat[i], &r.khat[i], &r.what[i])] {
                let f1 = f.view((0, 0), (m1, n));
                let f2 = f.view((m1, 0), (m2, n)).into_owned();
                let rebuilt = k + w * f1;
                worst = worst.max(max_abs_diff(&f2, &rebuilt) / max_abs(f).max(1.0));
            }
        }
        Ok(worst)
    }
}

/// Inner weights and right-hand sides of the two gain equations at `t`.
pub struct GainSystem {
    pub weight: Mat,
    pub rhs: Mat,
    pub weight_hat: Mat,
    pub rhs_hat: Mat,
}

/// `(ℝ, B_0ᵀX + Σ B_jᵀ X A_j + Sᵀ)` and the hatted pair at time `t`.
pub fn gain_system(p: &GameProblem, hat: &crate::problem::HattedView, x: &Mat, xhat: &Mat, t: f64) -> GainSystem {
    let lq = &p.lq;
    let b0 = lq.b[0].eval(t);
    let mut weight = lq.r.eval(t);
    let mut rhs = b0.transpose() * x + lq.s.eval(t).transpose();
    let hb0 = hat.b[0].eval(t);
    let mut weight_hat = hat.r.eval(t);
    let mut rhs_hat = hb0.transpose() * xhat + hat.s.eval(t).transpose();
    for j in 1..=lq.noise_dim {
        let (aj, bj) = (lq.a[j].eval(t), lq.b[j].eval(t));
        let (haj, hbj) = (hat.a[j].eval(t), hat.b[j].eval(t));
        weight += bj.transpose() * x * &bj;
        rhs += bj.transpose() * x * aj;
        weight_hat += hbj.transpose() * x * &hbj;
        rhs_hat += hbj.transpose() * x * haj;
    }
    GainSystem {
        weight: crate::linalg::symmetrize(&weight),
        rhs,
        weight_hat: crate::linalg::symmetrize(&weight_hat),
        rhs_hat,
    }
}

fn solve_gain(w: &Mat, rhs: &Mat, t: f64) -> Result<Mat> {
    if crate::linalg::sym_condition(w) > KAPPA_MAX {
        return Err(Error::Factorization { t, reason: "gain weight is singular".into() });
    }
    let f = SymIndefinite::new(w);
    f.solve(rhs).map(|x| -x).ok_or_else(|| Error::Factorization { t, reason: "gain weight is singular".into() })
}

fn reaction(v: &VFactor, f: &Mat, m1: usize, m2: usize, t: f64) -> Result<(Mat, Mat)> {
    let n = f.ncols();
    let v22 = SymIndefinite::new(&v.v22);
    let a = v22
        .solve(&v.v21)
        .ok_or_else(|| Error::Factorization { t, reason: "V22 is singular".into() })?;
    let f1 = f.view((0, 0), (m1, n));
    let f2 = f.view((m1, 0), (m2, n));
    Ok((&a * f1 + f2, -a))
}

/// Gains on `times` from global trajectories `X`, `X̂`.
pub fn build_gains_on(p: &GameProblem, x: &RiccatiTrajectory, xhat: &RiccatiTrajectory, times: &[f64]) -> Result<GainSchedule> {
    for (name, tr) in [("X", x), ("Xhat", xhat)] {
        if !tr.is_global() {
            return Err(Error::NotGlobal { t_min: tr.t_min(), reason: format!("{name} does not reach t = 0") });
        }
    }
    gains_impl(p, x, xhat, times)
}

/// Like [`build_gains_on`] but holds the gains constant below the point
/// where either trajectory stopped.
pub fn build_gains_clamped(
    p: &GameProblem,
    x: &RiccatiTrajectory,
    xhat: &RiccatiTrajectory,
    times: &[f64],
) -> Result<GainSchedule> {
    gains_impl(p, x, xhat, times)
}

fn gains_impl(p: &GameProblem, x: &RiccatiTrajectory, xhat: &RiccatiTrajectory, times: &[f64]) -> Result<GainSchedule> {
    let floor = x.t_min().max(xhat.t_min());
    let hat = p.hatted();
    let (n, m1, m2) = (p.n(), p.m1, p.m2);
    let mut f = Vec::with_capacity(times.len());
    let mut fhat = Vec::with_capacity(times.len());
    let mut resp = Some(ResponseGains { k: vec![], w: vec![], khat: vec![], what: vec![], v: vec![], vhat: vec![] });
    let mut response_error = None;
    for &t in times {
        let xt = x.eval(t.max(floor))?;
        let xht = xhat.eval(t.max(floor))?;
        let sys = gain_system(p, &hat, &xt, &xht, t);
        let ft = solve_gain(&sys.weight, &sys.rhs, t)?;
        let fht = solve_gain(&sys.weight_hat, &sys.rhs_hat, t)?;
        if let Some(r) = resp.as_mut() {
            let step = (|| -> Result<_> {
                let v = factorize_signature(&BlockWeight { t, full: sys.weight.clone(), m1 })?;
                let vh = factorize_signature(&BlockWeight { t, full: sys.weight_hat.clone(), m1 })?;
                let (k, w) = reaction(&v, &ft, m1, m2, t)?;
                let (kh, wh) = reaction(&vh, &fht, m1, m2, t)?;
                Ok((v, vh, k, w, kh, wh))
            })();
            match step {
                Ok((v, vh, k, w, kh, wh)) => {
                    r.v.push(v);
                    r.vhat.push(vh);
                    r.k.push(k);
                    r.w.push(w);
                    r.khat.push(kh);
                    r.what.push(wh);
                }
                Err(e) => {
                    response_error = Some(e.to_string());
                    resp = None;
                }
            }
        }
        f.push(ft);
        fhat.push(fht);
    }
    Ok(GainSchedule { n, m1, m2, times: times.to_vec(), f, fhat, response: resp, response_error })
}

/// Gains on the half-step refinement of the Riccati grid.
pub fn build_gains(p: &GameProblem, x: &RiccatiTrajectory, xhat: &RiccatiTrajectory) -> Result<GainSchedule> {
    build_gains_on(p, x, xhat, &x.grid().halved().times())
}

/// A player's equilibrium feedback `F_i x¹ + F̂_i x²`.
#[derive(Debug, Clone)]
pub struct PlayerLaw {
    pub fluct: Schedule,
    pub mean: Schedule,
}

/// Follower reaction map `u2 = K x¹ + W u1¹ + K̂ x² + Ŵ u1²`.
#[derive(Debug, Clone)]
pub struct ResponseMap {
    pub k: Schedule,
    pub w: Schedule,
    pub khat: Schedule,
    pub what: Schedule,
}

#[derive(Debug, Clone)]
pub struct StrategyPair {
    pub leader: PlayerLaw,
    pub follower: PlayerLaw,
    pub response: ResponseMap,
    pub noise_dim: usize,
}

impl StrategyPair {
    pub fn m1(&self) -> usize {
        self.leader.fluct.shape().0
    }
    pub fn m2(&self) -> usize {
        self.follower.fluct.shape().0
    }

    pub fn leader_control(&self) -> ControlSpec {
        ControlSpec::feedback(&self.leader.fluct, &self.leader.mean, self.noise_dim)
    }

    pub fn follower_control(&self) -> ControlSpec {
        ControlSpec::feedback(&self.follower.fluct, &self.follower.mean, self.noise_dim)
    }

    /// Both players' equilibrium laws stacked.
    pub fn joint_control(&self) -> ControlSpec {
        self.leader_control().stack(&self.follower_control())
    }
}

/// Assembles the equilibrium laws and checks `F2 = K + W F1`.
pub fn equilibrium_strategies(g: &GainSchedule, noise_dim: usize) -> Result<StrategyPair> {
    let residual = g.consistency_residual()?;
    if residual > GAIN_TOL {
        return Err(Error::Regime(format!("reaction gains inconsistent with F (residual {residual:.3e})")));
    }
    Ok(StrategyPair {
        leader: PlayerLaw { fluct: g.f1(), mean: g.fhat1() },
        follower: PlayerLaw { fluct: g.f2(), mean: g.fhat2() },
        response: ResponseMap { k: g.k()?, w: g.w()?, khat: g.khat()?, what: g.what()? },
        noise_dim,
    })
}

/// Joint control `(u1, reaction(u1))`.
pub fn follower_response(resp: &ResponseMap, u1: &ControlSpec) -> ControlSpec {
    let k = MatFn::from_schedule(&resp.k);
    let w = MatFn::from_schedule(&resp.w);
    let kh = MatFn::from_schedule(&resp.khat);
    let wh = MatFn::from_schedule(&resp.what);
    let u2 = ControlSpec {
        fluct_gain: k.add(&w.mul(&u1.fluct_gain)),
        noise_gain: w.mul(&u1.noise_gain),
        mean_gain: kh.add(&wh.mul(&u1.mean_gain)),
        offset: wh.mul(&u1.offset),
    };
    u1.stack(&u2)
}

/// Which player leads in the frame the gains were built in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Player 1 leads.
    Standard,
    /// Players exchanged: the original player 2 leads.
    Swapped,
}

/// Everything needed to play and verify the equilibrium.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    /// The game in the frame of `orientation`.
    pub game: GameProblem,
    pub orientation: Orientation,
    pub solution: CoupledSolution,
    pub gains: GainSchedule,
    pub strategies: StrategyPair,
}

/// Chooses the frame whose weights admit the signature factorization.
pub fn choose_orientation(sol: &CoupledSolution) -> Result<Orientation> {
    if sol.regime_holds(Regime::Stackelberg) {
        Ok(Orientation::Standard)
    } else if sol.regime_holds(Regime::SwappedStackelberg) {
        Ok(Orientation::Swapped)
    } else {
        Err(Error::Regime("neither the standard nor the swapped leader/follower sign pattern holds".into()))
    }
}

/// Solves, picks the frame and builds gains and strategies.
pub fn synthesize(p: &GameProblem, h: f64) -> Result<Equilibrium> {
    let sol = solve_coupled(p, h)?;
    if !sol.is_global() {
        let t = sol.x.t_min().max(sol.xhat.t_min());
        return Err(Error::NotGlobal { t_min: t, reason: format!("{:?}", sol.x.termination) });
    }
    let orientation = choose_orientation(&sol)?;
    let (game, solution) = match orientation {
        Orientation::Standard => (p.clone(), sol),
        Orientation::Swapped => {
            let g = p.swap_roles();
            let s = solve_coupled(&g, h)?;
            (g, s)
        }
    };
    let gains = build_gains(&game, &solution.x, &solution.xhat)?;
    let strategies = equilibrium_strategies(&gains, game.lq.noise_dim)?;
    Ok(Equilibrium { game, orientation, solution, gains, strategies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::LqProblem;

    #[test]
    fn zero_value_gives_zero_gains() {
        let mut lq = LqProblem::zeros(1, 2, 0, 1.0);
        lq.r = Schedule::constant(Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]), 1.0);
        lq.b[0] = Schedule::constant(Mat::from_row_slice(1, 2, &[1.0, 1.0]), 1.0);
        let p = GameProblem::new(lq, 1, 1).unwrap();
        let sol = solve_coupled(&p, 0.01).unwrap();
        let g = build_gains(&p, &sol.x, &sol.xhat).unwrap();
        assert!(g.f.iter().chain(&g.fhat).all(|f| max_abs(f) == 0.0));
        let s = equilibrium_strategies(&g, 0).unwrap();
        assert_eq!(s.response.w.max_abs(), 0.0);
    }
}
