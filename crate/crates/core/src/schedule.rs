//! Time-dependent matrices.
//!
//! [`Schedule`] is a piecewise-linear interpolant of samples on a time grid.
//! [`MatFn`] is an arbitrary continuous matrix function of time, used where
//! products of schedules must be evaluated exactly.

use std::fmt;
use std::sync::Arc;

use crate::linalg::Mat;

/// Relative slack for evaluation points just outside the grid.
const EDGE_SLACK: f64 = 1e-9;

/// Uniform grid `t_i = T * i / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl UniformGrid {
    pub fn new(horizon: f64, steps: usize) -> Self {
        assert!(steps > 0 && horizon > 0.0);
        Self { horizon, steps }
    }

    /// Grid with spacing `h`; `None` if `h` does not divide the horizon.
    pub fn with_step(horizon: f64, h: f64) -> Option<Self> {
        if !(h > 0.0) || !(horizon > 0.0) || h > horizon * (1.0 + 1e-12) {
            return None;
        }
        let steps = (horizon / h).round();
        if steps < 1.0 || ((steps * h) - horizon).abs() > 1e-9 * horizon {
            return None;
        }
        Some(Self::new(horizon, steps as usize))
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// The grid refined by a factor of two.
    pub fn halved(&self) -> Self {
        Self::new(self.horizon, self.steps * 2)
    }
}

/// Piecewise-linear matrix-valued function of time.
#[derive(Clone, PartialEq)]
pub struct Schedule {
    times: Arc<Vec<f64>>,
    samples: Vec<Mat>,
    uniform: bool,
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Schedule")
            .field("shape", &self.shape())
            .field("knots", &self.times.len())
            .field("span", &(self.times[0], *self.times.last().unwrap()))
            .finish()
    }
}

fn is_uniform(t: &[f64]) -> bool {
    if t.len() < 3 {
        return true;
    }
    let h = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    t.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.max(1.0))
}

impl Schedule {
    /// Builds a schedule; times must be strictly increasing and match the samples.
    pub fn new(times: Vec<f64>, samples: Vec<Mat>) -> Result<Self, String> {
        if times.len() < 2 {
            return Err("a schedule needs at least two knots".into());
        }
        if times.len() != samples.len() {
            return Err(format!("{} knots but {} samples", times.len(), samples.len()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("schedule knots must be strictly increasing".into());
        }
        let (r, c) = samples[0].shape();
        if samples.iter().any(|s| s.shape() != (r, c)) {
            return Err("schedule samples have inconsistent shapes".into());
        }
        if samples.iter().any(crate::linalg::has_non_finite) {
            return Err("schedule samples must be finite".into());
        }
        let uniform = is_uniform(&times);
        Ok(Self { times: Arc::new(times), samples, uniform })
    }

    pub fn constant(value: Mat, horizon: f64) -> Self {
        Self::new(vec![0.0, horizon], vec![value.clone(), value]).expect("valid constant schedule")
    }

    pub fn zeros(rows: usize, cols: usize, horizon: f64) -> Self {
        Self::constant(Mat::zeros(rows, cols), horizon)
    }

    /// Samples `f` on `times`.
    pub fn sample(times: &[f64], f: impl Fn(f64) -> Mat) -> Self {
        let samples = times.iter().map(|&t| f(t)).collect();
        Self::new(times.to_vec(), samples).expect("sampled schedule")
    }

    pub fn shape(&self) -> (usize, usize) {
        self.samples[0].shape()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &[Mat] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let ts = &self.times;
        let n = ts.len();
        let t = t.clamp(ts[0], ts[n - 1]);
        let i = if self.uniform {
            let h = (ts[n - 1] - ts[0]) / (n - 1) as f64;
            (((t - ts[0]) / h).floor() as usize).min(n - 2)
        } else {
            match ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                Ok(i) => i.min(n - 2),
                Err(i) => i.saturating_sub(1).min(n - 2),
            }
        };
        // guard against floor rounding on uniform grids
        let i = if t < ts[i] && i > 0 { i - 1 } else if t > ts[i + 1] && i + 2 < n { i + 1 } else { i };
        let s = ((t - ts[i]) / (ts[i + 1] - ts[i])).clamp(0.0, 1.0);
        (i, s)
    }

    /// Linear interpolation; times within a tiny slack of the span are clamped.
    pub fn eval(&self, t: f64) -> Mat {
        let span = (self.end() - self.start()).max(1.0);
        debug_assert!(
            t >= self.start() - EDGE_SLACK * span && t <= self.end() + EDGE_SLACK * span,
            "schedule evaluated at {t} outside [{}, {}]",
            self.start(),
            self.end()
        );
        let (i, s) = self.locate(t);
        if s == 0.0 {
            return self.samples[i].clone();
        }
        if s == 1.0 {
            return self.samples[i + 1].clone();
        }
        &self.samples[i] * (1.0 - s) + &self.samples[i + 1] * s
    }

    pub fn map(&self, f: impl Fn(&Mat) -> Mat) -> Self {
        let samples: Vec<Mat> = self.samples.iter().map(f).collect();
        Self { times: self.times.clone(), samples, uniform: self.uniform }
    }

    /// Pointwise combination on the union of both knot sets.
    ///
    /// Exact for affine `f`, since both operands are linear between knots.
    pub fn zip_with(&self, other: &Schedule, f: impl Fn(&Mat, &Mat) -> Mat) -> Self {
        if Arc::ptr_eq(&self.times, &other.times) || self.times == other.times {
            let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| f(a, b)).collect();
            return Self { times: self.times.clone(), samples, uniform: self.uniform };
        }
        let mut knots: Vec<f64> = self.times.iter().chain(other.times.iter()).copied().collect();
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        let lo = self.start().max(other.start());
        let hi = self.end().min(other.end());
        knots.retain(|t| *t >= lo - 1e-12 && *t <= hi + 1e-12);
        Self::sample(&knots, |t| f(&self.eval(t), &other.eval(t)))
    }

    pub fn add(&self, other: &Schedule) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|a| a * c)
    }

    pub fn transpose(&self) -> Self {
        self.map(|a| a.transpose())
    }

    /// Row/column block `[r0, r0+nr) x [c0, c0+nc)` of every sample.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        self.map(|a| a.view((r0, c0), (nr, nc)).into_owned())
    }

    /// Maximum absolute sample entry.
    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(crate::linalg::max_abs).fold(0.0, f64::max)
    }
}

/// Continuous matrix-valued function of time.
#[derive(Clone)]
pub struct MatFn {
    rows: usize,
    cols: usize,
    f: Arc<dyn Fn(f64) -> Mat + Send + Sync>,
}

impl fmt::Debug for MatFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MatFn({}x{})", self.rows, self.cols)
    }
}

impl MatFn {
    pub fn new(rows: usize, cols: usize, f: impl Fn(f64) -> Mat + Send + Sync + 'static) -> Self {
        Self { rows, cols, f: Arc::new(f) }
    }

    pub fn constant(m: Mat) -> Self {
        let (r, c) = m.shape();
        Self::new(r, c, move |_| m.clone())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, move |_| Mat::zeros(rows, cols))
    }

    pub fn from_schedule(s: &Schedule) -> Self {
        let (r, c) = s.shape();
        let s = s.clone();
        Self::new(r, c, move |t| s.eval(t))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn eval(&self, t: f64) -> Mat {
        (self.f)(t)
    }

    pub fn mul(&self, other: &MatFn) -> MatFn {
        assert_eq!(self.cols, other.rows, "MatFn product shape mismatch");
        let (a, b) = (self.clone(), other.clone());
        MatFn::new(self.rows, other.cols, move |t| a.eval(t) * b.eval(t))
    }

    pub fn add(&self, other: &MatFn) -> MatFn {
        assert_eq!(self.shape(), other.shape(), "MatFn sum shape mismatch");
        let (a, b) = (self.clone(), other.clone());
        MatFn::new(self.rows, self.cols, move |t| a.eval(t) + b.eval(t))
    }

    pub fn scale(&self, c: f64) -> MatFn {
        let a = self.clone();
        MatFn::new(self.rows, self.cols, move |t| a.eval(t) * c)
    }

    pub fn rows_range(&self, r0: usize, nr: usize) -> MatFn {
        let a = self.clone();
        let cols = self.cols;
        MatFn::new(nr, cols, move |t| a.eval(t).rows(r0, nr).into_owned())
    }

    /// Stacks `top` over `bottom`.
    pub fn vstack(top: &MatFn, bottom: &MatFn) -> MatFn {
        assert_eq!(top.cols, bottom.cols, "vstack column mismatch");
        let (a, b) = (top.clone(), bottom.clone());
        let (r1, r2, c) = (top.rows, bottom.rows, top.cols);
        MatFn::new(r1 + r2, c, move |t| {
            let mut out = Mat::zeros(r1 + r2, c);
            out.rows_mut(0, r1).copy_from(&a.eval(t));
            out.rows_mut(r1, r2).copy_from(&b.eval(t));
            out
        })
    }

    /// Places `left` and `right` side by side.
    pub fn hstack(left: &MatFn, right: &MatFn) -> MatFn {
        assert_eq!(left.rows, right.rows, "hstack row mismatch");
        let (a, b) = (left.clone(), right.clone());
        let (r, c1, c2) = (left.rows, left.cols, right.cols);
        MatFn::new(r, c1 + c2, move |t| {
            let mut out = Mat::zeros(r, c1 + c2);
            out.columns_mut(0, c1).copy_from(&a.eval(t));
            out.columns_mut(c1, c2).copy_from(&b.eval(t));
            out
        })
    }

    pub fn to_schedule(&self, times: &[f64]) -> Schedule {
        Schedule::sample(times, |t| self.eval(t))
    }
}

impl From<Schedule> for MatFn {
    fn from(s: Schedule) -> Self {
        MatFn::from_schedule(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn interpolates_linearly() {
        let s = Schedule::new(vec![0.0, 1.0, 3.0], vec![scalar(0.0), scalar(2.0), scalar(0.0)]).unwrap();
        assert_eq!(s.eval(0.5)[(0, 0)], 1.0);
        assert_eq!(s.eval(2.0)[(0, 0)], 1.0);
        assert_eq!(s.eval(3.0)[(0, 0)], 0.0);
        assert_eq!(s.eval(1.0)[(0, 0)], 2.0);
    }

    #[test]
    fn uniform_lookup_hits_knots() {
        let g = UniformGrid::new(1.0, 2000);
        let s = Schedule::sample(&g.times(), |t| scalar(t * t));
        for i in 0..=2000 {
            let t = g.time(i);
            assert_eq!(s.eval(t)[(0, 0)], t * t);
        }
    }

    #[test]
    fn zip_with_merges_knots() {
        let a = Schedule::new(vec![0.0, 1.0], vec![scalar(0.0), scalar(1.0)]).unwrap();
        let b = Schedule::new(vec![0.0, 0.5, 1.0], vec![scalar(0.0), scalar(1.0), scalar(0.0)]).unwrap();
        let c = a.add(&b);
        assert_eq!(c.times(), &[0.0, 0.5, 1.0]);
        assert!((c.eval(0.25)[(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Schedule::new(vec![0.0], vec![scalar(0.0)]).is_err());
        assert!(Schedule::new(vec![0.0, 0.0], vec![scalar(0.0), scalar(0.0)]).is_err());
        assert!(UniformGrid::with_step(1.0, 0.3).is_none());
        assert_eq!(UniformGrid::with_step(1.0, 0.25).unwrap().steps, 4);
    }
}
