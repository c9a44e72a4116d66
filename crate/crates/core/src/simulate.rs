//! Monte Carlo simulation through the mean/fluctuation decomposition.
//!
//! The mean `x² = E[x]` solves a deterministic ODE and is integrated with
//! RK4. The fluctuation `x¹ = x - E[x]` starts at zero and is integrated with
//! Euler–Maruyama. Every path has its own ChaCha8 stream selected by the path
//! index, so results do not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::LqProblem;
use crate::schedule::{MatFn, Schedule, UniformGrid};

/// Control law `u = Γ x¹ + S w + Γ̂ x² + d`.
///
/// The fluctuation part `Γ x¹ + S w` has zero mean, where `w` is the driving
/// Brownian motion; the mean part `Γ̂ x² + d` is deterministic.
#[derive(Debug, Clone)]
pub struct ControlSpec {
    pub fluct_gain: MatFn,
    pub noise_gain: MatFn,
    pub mean_gain: MatFn,
    pub offset: MatFn,
}

impl ControlSpec {
    pub fn zero(m: usize, n: usize, r: usize) -> Self {
        Self {
            fluct_gain: MatFn::zeros(m, n),
            noise_gain: MatFn::zeros(m, r),
            mean_gain: MatFn::zeros(m, n),
            offset: MatFn::zeros(m, 1),
        }
    }

    /// Pure feedback `Γ x¹ + Γ̂ x²`.
    pub fn feedback(fluct: &Schedule, mean: &Schedule, r: usize) -> Self {
        let (m, _) = fluct.shape();
        Self {
            fluct_gain: MatFn::from_schedule(fluct),
            noise_gain: MatFn::zeros(m, r),
            mean_gain: MatFn::from_schedule(mean),
            offset: MatFn::zeros(m, 1),
        }
    }

    pub fn rows(&self) -> usize {
        self.fluct_gain.shape().0
    }

    pub fn check_shapes(&self, m: usize, n: usize, r: usize) -> Result<()> {
        let ok = self.fluct_gain.shape() == (m, n)
            && self.noise_gain.shape() == (m, r)
            && self.mean_gain.shape() == (m, n)
            && self.offset.shape() == (m, 1);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("control does not match (m, n, r) = ({m}, {n}, {r})")))
        }
    }

    /// `self` for the first players' coordinates and `bottom` for the rest.
    pub fn stack(&self, bottom: &ControlSpec) -> Self {
        Self {
            fluct_gain: MatFn::vstack(&self.fluct_gain, &bottom.fluct_gain),
            noise_gain: MatFn::vstack(&self.noise_gain, &bottom.noise_gain),
            mean_gain: MatFn::vstack(&self.mean_gain, &bottom.mean_gain),
            offset: MatFn::vstack(&self.offset, &bottom.offset),
        }
    }

    /// Rows `[r0, r0 + nr)`.
    pub fn select_rows(&self, r0: usize, nr: usize) -> Self {
        Self {
            fluct_gain: self.fluct_gain.rows_range(r0, nr),
            noise_gain: self.noise_gain.rows_range(r0, nr),
            mean_gain: self.mean_gain.rows_range(r0, nr),
            offset: self.offset.rows_range(r0, nr),
        }
    }

    /// Termwise sum of two laws.
    pub fn add(&self, other: &ControlSpec) -> Self {
        Self {
            fluct_gain: self.fluct_gain.add(&other.fluct_gain),
            noise_gain: self.noise_gain.add(&other.noise_gain),
            mean_gain: self.mean_gain.add(&other.mean_gain),
            offset: self.offset.add(&other.offset),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            fluct_gain: self.fluct_gain.scale(c),
            noise_gain: self.noise_gain.scale(c),
            mean_gain: self.mean_gain.scale(c),
            offset: self.offset.scale(c),
        }
    }

    /// Same law with the rows outside `[r0, r0 + nr)` replaced by zero.
    pub fn embed(&self, r0: usize, total: usize) -> Self {
        let nr = self.rows();
        let pad = |f: &MatFn| {
            let (_, c) = f.shape();
            let f = f.clone();
            MatFn::new(total, c, move |t| {
                let mut out = Mat::zeros(total, c);
                out.rows_mut(r0, nr).copy_from(&f.eval(t));
                out
            })
        };
        Self {
            fluct_gain: pad(&self.fluct_gain),
            noise_gain: pad(&self.noise_gain),
            mean_gain: pad(&self.mean_gain),
            offset: pad(&self.offset),
        }
    }

    /// True when the law has no fluctuation component at all.
    pub fn is_mean_only(&self, grid: &[f64]) -> bool {
        grid.iter().all(|&t| {
            self.fluct_gain.eval(t).iter().all(|v| *v == 0.0) && self.noise_gain.eval(t).iter().all(|v| *v == 0.0)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        Self { n_paths, dt, seed, antithetic: false }
    }

    pub fn grid(&self, horizon: f64) -> Result<UniformGrid> {
        if self.n_paths < 2 {
            return Err(Error::Config("n_paths must be at least 2".into()));
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return Err(Error::Config("antithetic sampling needs an even path count".into()));
        }
        UniformGrid::with_step(horizon, self.dt).ok_or(Error::InvalidStep { step: self.dt, horizon })
    }
}

/// Mean with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    /// Independent samples behind the standard error (pairs when antithetic).
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// The mean-path contribution `J²`, computed without sampling.
    pub deterministic_part: f64,
}

/// One fluctuation path: `x¹`, the Brownian path `w` and `u¹` on the grid.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub index: usize,
    n: usize,
    m: usize,
    r: usize,
    x1: Vec<f64>,
    w: Vec<f64>,
    u1: Vec<f64>,
}

impl PathSample {
    pub fn x1(&self, k: usize) -> &[f64] {
        &self.x1[k * self.n..(k + 1) * self.n]
    }
    pub fn w(&self, k: usize) -> &[f64] {
        &self.w[k * self.r..(k + 1) * self.r]
    }
    pub fn u1(&self, k: usize) -> &[f64] {
        &self.u1[k * self.m..(k + 1) * self.m]
    }
}

/// `out = a v` for a column-major matrix.
#[inline]
pub(crate) fn matvec_into(a: &Mat, v: &[f64], out: &mut [f64]) {
    let (rows, cols) = a.shape();
    let data = a.as_slice();
    out[..rows].iter_mut().for_each(|o| *o = 0.0);
    for j in 0..cols {
        let vj = v[j];
        if vj != 0.0 {
            let col = &data[j * rows..(j + 1) * rows];
            for i in 0..rows {
                out[i] += col[i] * vj;
            }
        }
    }
}

#[inline]
pub(crate) fn matvec_add(a: &Mat, v: &[f64], scale: f64, out: &mut [f64]) {
    let (rows, cols) = a.shape();
    let data = a.as_slice();
    for j in 0..cols {
        let vj = v[j] * scale;
        if vj != 0.0 {
            let col = &data[j * rows..(j + 1) * rows];
            for i in 0..rows {
                out[i] += col[i] * vj;
            }
        }
    }
}

/// `uᵀ A v` for a column-major matrix.
#[inline]
pub(crate) fn bilinear(a: &Mat, u: &[f64], v: &[f64]) -> f64 {
    let (rows, cols) = a.shape();
    let data = a.as_slice();
    let mut s = 0.0;
    for j in 0..cols {
        let vj = v[j];
        if vj != 0.0 {
            let col = &data[j * rows..(j + 1) * rows];
            let mut c = 0.0;
            for i in 0..rows {
                c += col[i] * u[i];
            }
            s += c * vj;
        }
    }
    s
}

/// Pairwise summation in a fixed order.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Sample mean and standard error of i.i.d. values.
pub fn mean_and_se(values: &[f64]) -> Estimate {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    if n < 2 {
        return Estimate { mean, std_error: 0.0, n_samples: n };
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    Estimate { mean, std_error: (var / n as f64).sqrt(), n_samples: n }
}

/// Ensemble description; paths are regenerated on demand from their streams.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: UniformGrid,
    pub cfg: SimConfig,
    n: usize,
    m: usize,
    r: usize,
    /// Mean state `x²` at grid times.
    pub x2: Vec<Vector>,
    /// Mean control `u²` at grid times.
    pub u2: Vec<Vector>,
    gamma: Vec<Mat>,
    sgain: Vec<Mat>,
    step_x: Vec<Mat>,
    step_w: Vec<Mat>,
    diff_x: Vec<Vec<Mat>>,
    diff_w: Vec<Vec<Mat>>,
    diff_c: Vec<Vec<Vector>>,
    deterministic: bool,
}

/// Integrates `x²` and prepares the per-step coefficients for `x¹`.
pub fn simulate_paths(p: &LqProblem, u: &ControlSpec, x_s: &Vector, cfg: &SimConfig) -> Result<PathEnsemble> {
    let grid = cfg.grid(p.horizon)?;
    let (n, m, r) = (p.n, p.m, p.noise_dim);
    u.check_shapes(m, n, r)?;
    if x_s.len() != n {
        return Err(Error::Shape(format!("initial state has length {}, expected {n}", x_s.len())));
    }
    let steps = grid.steps;
    let dt = grid.step();
    let half = grid.halved();
    let hat = p.hatted();

    // mean path by RK4 on dx² = (Â_0 + B̂_0 Γ̂) x² + B̂_0 d
    let closed = |t: f64| -> (Mat, Vector) {
        let b0 = hat.b[0].eval(t);
        let a = hat.a[0].eval(t) + &b0 * u.mean_gain.eval(t);
        let c = &b0 * u.offset.eval(t);
        (a, Vector::from_column_slice(c.as_slice()))
    };
    let f = |(a, c): &(Mat, Vector), x: &Vector| -> Vector { a * x + c };
    let mut x2 = Vec::with_capacity(steps + 1);
    x2.push(x_s.clone());
    let mut lo = closed(0.0);
    for k in 0..steps {
        let mid = closed(half.time(2 * k + 1));
        let hi = closed(grid.time(k + 1));
        let x = &x2[k];
        let k1 = f(&lo, x);
        let k2 = f(&mid, &(x + &k1 * (0.5 * dt)));
        let k3 = f(&mid, &(x + &k2 * (0.5 * dt)));
        let k4 = f(&hi, &(x + &k3 * dt));
        x2.push(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0));
        lo = hi;
    }
    let u2: Vec<Vector> = (0..=steps)
        .map(|k| {
            let t = grid.time(k);
            let v = u.mean_gain.eval(t) * &x2[k] + u.offset.eval(t);
            Vector::from_column_slice(v.as_slice())
        })
        .collect();

    let mut gamma = Vec::with_capacity(steps + 1);
    let mut sgain = Vec::with_capacity(steps + 1);
    let mut step_x = Vec::with_capacity(steps);
    let mut step_w = Vec::with_capacity(steps);
    let mut diff_x = Vec::with_capacity(steps);
    let mut diff_w = Vec::with_capacity(steps);
    let mut diff_c = Vec::with_capacity(steps);
    for k in 0..=steps {
        let t = grid.time(k);
        let g = u.fluct_gain.eval(t);
        let s = u.noise_gain.eval(t);
        if k < steps {
            let b0 = p.b[0].eval(t);
            step_x.push(Mat::identity(n, n) + (p.a[0].eval(t) + &b0 * &g) * dt);
            step_w.push(&b0 * &s * dt);
            let mut dx = Vec::with_capacity(r);
            let mut dw = Vec::with_capacity(r);
            let mut dc = Vec::with_capacity(r);
            for j in 1..=r {
                let bj = p.b[j].eval(t);
                dx.push(p.a[j].eval(t) + &bj * &g);
                dw.push(&bj * &s);
                dc.push(hat.a[j].eval(t) * &x2[k] + hat.b[j].eval(t) * &u2[k]);
            }
            diff_x.push(dx);
            diff_w.push(dw);
            diff_c.push(dc);
        }
        gamma.push(g);
        sgain.push(s);
    }
    Ok(PathEnsemble {
        grid,
        cfg: *cfg,
        n,
        m,
        r,
        x2,
        u2,
        gamma,
        sgain,
        step_x,
        step_w,
        diff_x,
        diff_w,
        diff_c,
        deterministic: r == 0,
    })
}

impl PathEnsemble {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.r)
    }

    /// With no noise every path coincides, so one path is simulated.
    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// Paths actually generated.
    pub fn n_paths(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.cfg.n_paths
        }
    }

    /// Regenerates path `index`.
    pub fn path(&self, index: usize) -> PathSample {
        let (n, m, r) = (self.n, self.m, self.r);
        let steps = self.grid.steps;
        let sqdt = self.grid.step().sqrt();
        let (stream, sign) = if self.cfg.antithetic { (index / 2, if index % 2 == 1 { -1.0 } else { 1.0 }) } else { (index, 1.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream as u64);
        let mut x1 = vec![0.0; (steps + 1) * n];
        let mut w = vec![0.0; (steps + 1) * r];
        let mut u1 = vec![0.0; (steps + 1) * m];
        let mut dw = vec![0.0; r];
        let mut tmp = vec![0.0; n];
        for k in 0..steps {
            for j in 0..r {
                let z: f64 = StandardNormal.sample(&mut rng);
                dw[j] = sign * sqdt * z;
            }
            let (cur, next) = x1.split_at_mut((k + 1) * n);
            let xk = &cur[k * n..];
            let wk = &w[k * r..(k + 1) * r];
            let xn = &mut next[..n];
            matvec_into(&self.step_x[k], xk, xn);
            if r > 0 {
                matvec_add(&self.step_w[k], wk, 1.0, xn);
            }
            for j in 0..r {
                matvec_into(&self.diff_x[k][j], xk, &mut tmp);
                matvec_add(&self.diff_w[k][j], wk, 1.0, &mut tmp);
                let c = self.diff_c[k][j].as_slice();
                for i in 0..n {
                    xn[i] += (tmp[i] + c[i]) * dw[j];
                }
            }
            for j in 0..r {
                w[(k + 1) * r + j] = w[k * r + j] + dw[j];
            }
        }
        for k in 0..=steps {
            let out = &mut u1[k * m..(k + 1) * m];
            matvec_into(&self.gamma[k], &x1[k * n..(k + 1) * n], out);
            if r > 0 {
                matvec_add(&self.sgain[k], &w[k * r..(k + 1) * r], 1.0, out);
            }
        }
        PathSample { index, n, m, r, x1, w, u1 }
    }

    /// Applies `f` to every path in parallel; results are in index order.
    pub fn map_paths<T: Send>(&self, f: impl Fn(&PathSample) -> T + Sync + Send) -> Vec<T> {
        (0..self.n_paths()).into_par_iter().map(|i| f(&self.path(i))).collect()
    }

    /// Mean and standard error of a per-path statistic.
    pub fn estimate(&self, f: impl Fn(&PathSample) -> f64 + Sync + Send) -> Estimate {
        let v = self.map_paths(f);
        reduce_samples(&v, self.cfg.antithetic && !self.deterministic)
    }
}

/// Antithetic pairs are averaged before the standard error is taken.
pub fn reduce_samples(values: &[f64], antithetic: bool) -> Estimate {
    if values.len() == 1 {
        return Estimate { mean: values[0], std_error: 0.0, n_samples: 1 };
    }
    if antithetic {
        let pairs: Vec<f64> = values.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        mean_and_se(&pairs)
    } else {
        mean_and_se(values)
    }
}

/// Per-path statistic over two ensembles that share their driving noise.
pub fn estimate_paired(
    a: &PathEnsemble,
    b: &PathEnsemble,
    f: impl Fn(&PathSample, &PathSample) -> f64 + Sync + Send,
) -> Result<Estimate> {
    if a.cfg != b.cfg || a.grid != b.grid || a.dims() != b.dims() {
        return Err(Error::Config("paired ensembles must share grid, dimensions and configuration".into()));
    }
    let v: Vec<f64> = (0..a.n_paths()).into_par_iter().map(|i| f(&a.path(i), &b.path(i))).collect();
    Ok(reduce_samples(&v, a.cfg.antithetic && !a.deterministic))
}

/// Cost weights sampled on the simulation grid.
#[derive(Debug, Clone)]
pub struct CostWeights {
    pub q: Vec<Mat>,
    pub s: Vec<Mat>,
    pub r: Vec<Mat>,
    pub g: Mat,
}

impl CostWeights {
    pub fn base(p: &LqProblem, grid: &UniformGrid) -> Self {
        let t = grid.times();
        Self {
            q: t.iter().map(|&t| p.q.eval(t)).collect(),
            s: t.iter().map(|&t| p.s.eval(t)).collect(),
            r: t.iter().map(|&t| p.r.eval(t)).collect(),
            g: p.g.clone(),
        }
    }

    pub fn hatted(p: &LqProblem, grid: &UniformGrid) -> Self {
        let h = p.hatted();
        let t = grid.times();
        Self {
            q: t.iter().map(|&t| h.q.eval(t)).collect(),
            s: t.iter().map(|&t| h.s.eval(t)).collect(),
            r: t.iter().map(|&t| h.r.eval(t)).collect(),
            g: h.g,
        }
    }

    /// `½[⟨G x_N, x_N⟩ + ∫ ⟨Qx,x⟩ + 2⟨Su,x⟩ + ⟨Ru,u⟩]` by the trapezoid rule.
    pub fn cost(&self, dt: f64, x: impl Fn(usize) -> Vec<f64>, u: impl Fn(usize) -> Vec<f64>) -> f64 {
        let steps = self.q.len() - 1;
        let mut integral = 0.0;
        for k in 0..=steps {
            let (xk, uk) = (x(k), u(k));
            let v = bilinear(&self.q[k], &xk, &xk) + 2.0 * bilinear(&self.s[k], &xk, &uk) + bilinear(&self.r[k], &uk, &uk);
            integral += if k == 0 || k == steps { 0.5 * v } else { v };
        }
        let xn = x(steps);
        0.5 * (bilinear(&self.g, &xn, &xn) + integral * dt)
    }

    /// Fluctuation cost of one path.
    pub fn path_cost(&self, dt: f64, path: &PathSample) -> f64 {
        let steps = self.q.len() - 1;
        let mut integral = 0.0;
        for k in 0..=steps {
            let (xk, uk) = (path.x1(k), path.u1(k));
            let v = bilinear(&self.q[k], xk, xk) + 2.0 * bilinear(&self.s[k], xk, uk) + bilinear(&self.r[k], uk, uk);
            integral += if k == 0 || k == steps { 0.5 * v } else { v };
        }
        let xn = path.x1(steps);
        0.5 * (bilinear(&self.g, xn, xn) + integral * dt)
    }
}

/// Mean-path cost `J²` of an ensemble.
pub fn deterministic_cost(p: &LqProblem, e: &PathEnsemble) -> f64 {
    let w = CostWeights::hatted(p, &e.grid);
    w.cost(e.grid.step(), |k| e.x2[k].as_slice().to_vec(), |k| e.u2[k].as_slice().to_vec())
}

/// `J = J¹ + J²` with `J¹` averaged over paths.
pub fn evaluate_cost(p: &LqProblem, e: &PathEnsemble) -> CostEstimate {
    let j2 = deterministic_cost(p, e);
    let base = CostWeights::base(p, &e.grid);
    let dt = e.grid.step();
    let est = e.estimate(|path| base.path_cost(dt, path));
    CostEstimate { mean: j2 + est.mean, std_error: est.std_error, n_paths: e.n_paths(), deterministic_part: j2 }
}

/// Simulates `u` from `x_s` and evaluates its cost.
pub fn estimate_cost(p: &LqProblem, u: &ControlSpec, x_s: &Vector, cfg: &SimConfig) -> Result<CostEstimate> {
    let e = simulate_paths(p, u, x_s, cfg)?;
    Ok(evaluate_cost(p, &e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dynamics_keep_state() {
        let p = LqProblem::zeros(2, 1, 1, 1.0);
        let x0 = Vector::from_vec(vec![1.0, -2.0]);
        let e = simulate_paths(&p, &ControlSpec::zero(1, 2, 1), &x0, &SimConfig::new(4, 0.01, 1)).unwrap();
        for k in 0..=e.grid.steps {
            assert_eq!(e.x2[k], x0);
        }
        let path = e.path(3);
        assert!(path.x1.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn paths_are_reproducible_by_index() {
        let mut p = LqProblem::zeros(1, 1, 1, 1.0);
        p.a[1] = Schedule::constant(Mat::from_element(1, 1, 1.0), 1.0);
        p.a_bar[1] = Schedule::constant(Mat::from_element(1, 1, -1.0), 1.0);
        p.a[0] = Schedule::constant(Mat::from_element(1, 1, 0.5), 1.0);
        // diffusion constant through x² only: Â_1 = 0 would kill it, so use b_bar
        p.b_bar[1] = Schedule::constant(Mat::from_element(1, 1, 1.0), 1.0);
        let u = ControlSpec { offset: MatFn::constant(Mat::from_element(1, 1, 1.0)), ..ControlSpec::zero(1, 1, 1) };
        let e = simulate_paths(&p, &u, &Vector::from_vec(vec![1.0]), &SimConfig::new(8, 0.01, 42)).unwrap();
        let a = e.path(5);
        let b = e.path(5);
        assert_eq!(a.x1, b.x1);
        assert_ne!(e.path(4).x1, a.x1);
        assert!(a.x1.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn pairwise_sum_matches_naive_sum() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }
}
