//! Game data model, file loading and derived coefficient views.
//!
//! The state equation is
//!
//! ```text
//! dx = (A_0 x + Ā_0 E[x] + B_0 u + B̄_0 E[u]) dt
//!    + Σ_j (A_j x + Ā_j E[x] + B_j u + B̄_j E[u]) dw_j ,   j = 1..r
//! ```
//!
//! and the cost is
//!
//! ```text
//! J = ½ E[ ⟨G x(T), x(T)⟩ + ⟨Ḡ E x(T), E x(T)⟩
//!        + ∫ ⟨Q x, x⟩ + 2⟨S u, x⟩ + ⟨R u, u⟩ + (the same with bars on E x, E u) dt ]
//! ```
//!
//! `Q`, `S`, `R`, `G` are the problem file's `M`, `L`, `R`, `G_T`. Player 1 owns
//! the first `m1` input coordinates and maximizes; player 2 owns the remaining
//! `m2` and minimizes.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{max_abs_diff, symmetrize, Mat};
use crate::schedule::Schedule;

/// Largest entry of `Z - Zᵀ` accepted before symmetrization.
pub const ASYMMETRY_TOL: f64 = 1e-12;

/// Single-input-block LQ data with mean-field terms.
#[derive(Debug, Clone)]
pub struct LqProblem {
    pub n: usize,
    pub m: usize,
    pub noise_dim: usize,
    pub horizon: f64,
    /// `A_0..A_r`, each n×n.
    pub a: Vec<Schedule>,
    pub a_bar: Vec<Schedule>,
    /// `B_0..B_r`, each n×m.
    pub b: Vec<Schedule>,
    pub b_bar: Vec<Schedule>,
    pub q: Schedule,
    pub q_bar: Schedule,
    pub s: Schedule,
    pub s_bar: Schedule,
    pub r: Schedule,
    pub r_bar: Schedule,
    pub g: Mat,
    pub g_bar: Mat,
}

/// Coefficients with the mean-field parts folded in: `Â = A + Ā` and so on.
#[derive(Debug, Clone)]
pub struct HattedView {
    pub a: Vec<Schedule>,
    pub b: Vec<Schedule>,
    pub q: Schedule,
    pub s: Schedule,
    pub r: Schedule,
    pub g: Mat,
}

/// Two-player game: an [`LqProblem`] whose input splits as `u = (u1, u2)`.
#[derive(Debug, Clone)]
pub struct GameProblem {
    pub lq: LqProblem,
    pub m1: usize,
    pub m2: usize,
}

/// Column blocks of `B`, `S` and principal blocks of `R`, split at `m1`.
#[derive(Debug, Clone)]
pub struct PartitionedView {
    pub m1: usize,
    pub m2: usize,
    pub b1: Vec<Schedule>,
    pub b2: Vec<Schedule>,
    pub b_bar1: Vec<Schedule>,
    pub b_bar2: Vec<Schedule>,
    pub s1: Schedule,
    pub s2: Schedule,
    pub s_bar1: Schedule,
    pub s_bar2: Schedule,
    pub r11: Schedule,
    pub r12: Schedule,
    pub r22: Schedule,
    pub r_bar11: Schedule,
    pub r_bar12: Schedule,
    pub r_bar22: Schedule,
}

fn check_shape(name: &str, s: &Schedule, shape: (usize, usize)) -> Result<()> {
    if s.shape() != shape {
        return Err(Error::Validation(format!(
            "{name} has shape {:?}, expected {:?}",
            s.shape(),
            shape
        )));
    }
    Ok(())
}

fn check_span(name: &str, s: &Schedule, horizon: f64) -> Result<()> {
    if s.start() != 0.0 || (s.end() - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::Validation(format!(
            "{name} is defined on [{}, {}], expected [0, {horizon}]",
            s.start(),
            s.end()
        )));
    }
    Ok(())
}

fn symmetric_mat(name: &str, m: &Mat) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(Error::Validation(format!("{name} must be square")));
    }
    let asym = max_abs_diff(m, &m.transpose());
    if asym > ASYMMETRY_TOL {
        return Err(Error::Validation(format!(
            "{name} is not symmetric (asymmetry {asym:.3e} exceeds {ASYMMETRY_TOL:e})"
        )));
    }
    Ok(symmetrize(m))
}

fn symmetric_schedule(name: &str, s: &Schedule) -> Result<Schedule> {
    for (t, m) in s.times().iter().zip(s.samples()) {
        symmetric_mat(&format!("{name}(t={t})"), m)?;
    }
    Ok(s.map(symmetrize))
}

impl LqProblem {
    /// Checks dimensions, spans and symmetry; symmetrizes the weight matrices.
    pub fn validated(mut self) -> Result<Self> {
        let (n, m, r) = (self.n, self.m, self.noise_dim);
        if n == 0 || m == 0 {
            return Err(Error::Validation("n and m must be positive".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Validation("horizon must be positive and finite".into()));
        }
        for (name, v) in [("A", &self.a), ("Abar", &self.a_bar), ("B", &self.b), ("Bbar", &self.b_bar)] {
            if v.len() != r + 1 {
                return Err(Error::Validation(format!(
                    "{name} needs {} entries (k = 0..r), found {}",
                    r + 1,
                    v.len()
                )));
            }
        }
        for k in 0..=r {
            check_shape(&format!("A[{k}]"), &self.a[k], (n, n))?;
            check_shape(&format!("Abar[{k}]"), &self.a_bar[k], (n, n))?;
            check_shape(&format!("B[{k}]"), &self.b[k], (n, m))?;
            check_shape(&format!("Bbar[{k}]"), &self.b_bar[k], (n, m))?;
        }
        check_shape("M", &self.q, (n, n))?;
        check_shape("Mbar", &self.q_bar, (n, n))?;
        check_shape("L", &self.s, (n, m))?;
        check_shape("Lbar", &self.s_bar, (n, m))?;
        check_shape("R", &self.r, (m, m))?;
        check_shape("Rbar", &self.r_bar, (m, m))?;
        if self.g.shape() != (n, n) || self.g_bar.shape() != (n, n) {
            return Err(Error::Validation("G_T and Gbar_T must be n×n".into()));
        }
        let all = self
            .a
            .iter()
            .chain(&self.a_bar)
            .chain(&self.b)
            .chain(&self.b_bar)
            .chain([&self.q, &self.q_bar, &self.s, &self.s_bar, &self.r, &self.r_bar]);
        for s in all {
            check_span("coefficient", s, self.horizon)?;
        }
        self.q = symmetric_schedule("M", &self.q)?;
        self.q_bar = symmetric_schedule("Mbar", &self.q_bar)?;
        self.r = symmetric_schedule("R", &self.r)?;
        self.r_bar = symmetric_schedule("Rbar", &self.r_bar)?;
        self.g = symmetric_mat("G_T", &self.g)?;
        self.g_bar = symmetric_mat("Gbar_T", &self.g_bar)?;
        if crate::linalg::has_non_finite(&self.g) || crate::linalg::has_non_finite(&self.g_bar) {
            return Err(Error::Validation("terminal weights must be finite".into()));
        }
        Ok(self)
    }

    /// Problem with every coefficient zero except `R`.
    pub fn zeros(n: usize, m: usize, noise_dim: usize, horizon: f64) -> Self {
        let z = |r, c| Schedule::zeros(r, c, horizon);
        Self {
            n,
            m,
            noise_dim,
            horizon,
            a: vec![z(n, n); noise_dim + 1],
            a_bar: vec![z(n, n); noise_dim + 1],
            b: vec![z(n, m); noise_dim + 1],
            b_bar: vec![z(n, m); noise_dim + 1],
            q: z(n, n),
            q_bar: z(n, n),
            s: z(n, m),
            s_bar: z(n, m),
            r: z(m, m),
            r_bar: z(m, m),
            g: Mat::zeros(n, n),
            g_bar: Mat::zeros(n, n),
        }
    }

    pub fn hatted(&self) -> HattedView {
        let sum = |x: &[Schedule], y: &[Schedule]| x.iter().zip(y).map(|(p, q)| p.add(q)).collect();
        HattedView {
            a: sum(&self.a, &self.a_bar),
            b: sum(&self.b, &self.b_bar),
            q: self.q.add(&self.q_bar),
            s: self.s.add(&self.s_bar),
            r: self.r.add(&self.r_bar),
            g: &self.g + &self.g_bar,
        }
    }

    /// Copy with all mean-field coefficients and `Ḡ` set to zero.
    pub fn without_mean_field(&self) -> Self {
        let mut p = self.clone();
        let zero = |s: &Schedule| s.map(|m| Mat::zeros(m.nrows(), m.ncols()));
        p.a_bar = p.a_bar.iter().map(zero).collect();
        p.b_bar = p.b_bar.iter().map(zero).collect();
        p.q_bar = zero(&p.q_bar);
        p.s_bar = zero(&p.s_bar);
        p.r_bar = zero(&p.r_bar);
        p.g_bar = Mat::zeros(self.n, self.n);
        p
    }

    /// Multiplies every cost weight (including bars and terminals) by `c`.
    pub fn scale_costs(&self, c: f64) -> Self {
        let mut p = self.clone();
        for s in [&mut p.q, &mut p.q_bar, &mut p.s, &mut p.s_bar, &mut p.r, &mut p.r_bar] {
            *s = s.scale(c);
        }
        p.g *= c;
        p.g_bar *= c;
        p
    }

    /// Sorted union of all coefficient knots.
    pub fn knots(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .a
            .iter()
            .chain(&self.a_bar)
            .chain(&self.b)
            .chain(&self.b_bar)
            .chain([&self.q, &self.q_bar, &self.s, &self.s_bar, &self.r, &self.r_bar])
            .flat_map(|s| s.times().iter().copied())
            .collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        t
    }
}

impl GameProblem {
    pub fn new(lq: LqProblem, m1: usize, m2: usize) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::Validation("m1 and m2 must both be at least 1".into()));
        }
        if m1 + m2 != lq.m {
            return Err(Error::Validation(format!("m1 + m2 = {} but inputs have {} columns", m1 + m2, lq.m)));
        }
        Ok(Self { lq: lq.validated()?, m1, m2 })
    }

    pub fn n(&self) -> usize {
        self.lq.n
    }

    pub fn horizon(&self) -> f64 {
        self.lq.horizon
    }

    pub fn hatted(&self) -> HattedView {
        self.lq.hatted()
    }

    pub fn partitioned(&self) -> PartitionedView {
        let (n, m1, m2) = (self.lq.n, self.m1, self.m2);
        let cols1 = |s: &Schedule| s.block(0, 0, n, m1);
        let cols2 = |s: &Schedule| s.block(0, m1, n, m2);
        let lq = &self.lq;
        PartitionedView {
            m1,
            m2,
            b1: lq.b.iter().map(cols1).collect(),
            b2: lq.b.iter().map(cols2).collect(),
            b_bar1: lq.b_bar.iter().map(cols1).collect(),
            b_bar2: lq.b_bar.iter().map(cols2).collect(),
            s1: cols1(&lq.s),
            s2: cols2(&lq.s),
            s_bar1: cols1(&lq.s_bar),
            s_bar2: cols2(&lq.s_bar),
            r11: lq.r.block(0, 0, m1, m1),
            r12: lq.r.block(0, m1, m1, m2),
            r22: lq.r.block(m1, m1, m2, m2),
            r_bar11: lq.r_bar.block(0, 0, m1, m1),
            r_bar12: lq.r_bar.block(0, m1, m1, m2),
            r_bar22: lq.r_bar.block(m1, m1, m2, m2),
        }
    }

    /// Same game with the players' input blocks exchanged.
    ///
    /// Columns of `B`, `B̄`, `S`, `S̄` and rows/columns of `R`, `R̄` are permuted
    /// so that the old player 2 comes first. The cost is unchanged; the
    /// maximizing (leader) role moves to the old player 2.
    pub fn swap_roles(&self) -> GameProblem {
        let (m1, m2, m) = (self.m1, self.m2, self.lq.m);
        let perm: Vec<usize> = (m1..m).chain(0..m1).collect();
        let cols = |s: &Schedule| {
            s.map(|x| Mat::from_fn(x.nrows(), m, |i, j| x[(i, perm[j])]))
        };
        let both = |s: &Schedule| s.map(|x| Mat::from_fn(m, m, |i, j| x[(perm[i], perm[j])]));
        let mut lq = self.lq.clone();
        lq.b = lq.b.iter().map(cols).collect();
        lq.b_bar = lq.b_bar.iter().map(cols).collect();
        lq.s = cols(&lq.s);
        lq.s_bar = cols(&lq.s_bar);
        lq.r = both(&lq.r);
        lq.r_bar = both(&lq.r_bar);
        GameProblem { lq, m1: m2, m2: m1 }
    }
}

impl PartitionedView {
    /// Reassembles `(B_k, B̄_k)`, `(S, S̄)`, `(R, R̄)` from the blocks.
    pub fn reassemble_b(&self, k: usize) -> (Schedule, Schedule) {
        let join = |x: &Schedule, y: &Schedule| {
            x.zip_with(y, |a, b| {
                let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
                out.columns_mut(0, a.ncols()).copy_from(a);
                out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
                out
            })
        };
        (join(&self.b1[k], &self.b2[k]), join(&self.b_bar1[k], &self.b_bar2[k]))
    }

    pub fn reassemble_s(&self) -> (Schedule, Schedule) {
        let join = |x: &Schedule, y: &Schedule| {
            x.zip_with(y, |a, b| {
                let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
                out.columns_mut(0, a.ncols()).copy_from(a);
                out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
                out
            })
        };
        (join(&self.s1, &self.s2), join(&self.s_bar1, &self.s_bar2))
    }

    pub fn reassemble_r(&self) -> (Schedule, Schedule) {
        let (m1, m2) = (self.m1, self.m2);
        let join = |r11: &Schedule, r12: &Schedule, r22: &Schedule| {
            let top = r11.zip_with(r12, |a, b| {
                let mut out = Mat::zeros(m1 + m2, m1 + m2);
                out.view_mut((0, 0), (m1, m1)).copy_from(a);
                out.view_mut((0, m1), (m1, m2)).copy_from(b);
                out.view_mut((m1, 0), (m2, m1)).copy_from(&b.transpose());
                out
            });
            top.zip_with(r22, |a, c| {
                let mut out = a.clone();
                out.view_mut((m1, m1), (m2, m2)).copy_from(c);
                out
            })
        };
        (join(&self.r11, &self.r12, &self.r22), join(&self.r_bar11, &self.r_bar12, &self.r_bar22))
    }
}

// ---------------------------------------------------------------- file format

pub fn parse_matrix(name: &str, v: &Value) -> Result<Mat> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Parse(format!("{name}: expected a nested array")))?;
    if rows.is_empty() {
        return Err(Error::Parse(format!("{name}: empty matrix")));
    }
    let mut data = Vec::new();
    let mut ncols = None;
    for row in rows {
        let row = row
            .as_array()
            .ok_or_else(|| Error::Parse(format!("{name}: rows must be arrays")))?;
        if *ncols.get_or_insert(row.len()) != row.len() {
            return Err(Error::Validation(format!("{name}: ragged matrix")));
        }
        for x in row {
            let x = x
                .as_f64()
                .ok_or_else(|| Error::Parse(format!("{name}: entries must be numbers")))?;
            if !x.is_finite() {
                return Err(Error::Validation(format!("{name}: non-finite entry")));
            }
            data.push(x);
        }
    }
    Ok(Mat::from_row_slice(rows.len(), ncols.unwrap_or(0), &data))
}

fn depth(v: &Value) -> usize {
    match v {
        Value::Array(a) => 1 + a.first().map(depth).unwrap_or(0),
        _ => 0,
    }
}

/// A matrix (constant) or a list of matrices matching `grid`.
pub fn parse_schedule(name: &str, v: &Value, grid: &[f64]) -> Result<Schedule> {
    match depth(v) {
        2 => {
            let m = parse_matrix(name, v)?;
            Schedule::new(grid.to_vec(), vec![m; grid.len()]).map_err(Error::Validation)
        }
        3 => {
            let list = v.as_array().unwrap();
            if list.len() != grid.len() {
                return Err(Error::Validation(format!(
                    "{name}: {} samples for a grid of {} points",
                    list.len(),
                    grid.len()
                )));
            }
            let samples = list
                .iter()
                .enumerate()
                .map(|(i, x)| parse_matrix(&format!("{name}[{i}]"), x))
                .collect::<Result<Vec<_>>>()?;
            Schedule::new(grid.to_vec(), samples).map_err(|e| Error::Validation(format!("{name}: {e}")))
        }
        _ => Err(Error::Parse(format!("{name}: expected a matrix or a list of matrices"))),
    }
}

/// Validates a time grid on `[0, T]`.
pub fn parse_grid(v: Option<&Value>, horizon: f64) -> Result<Vec<f64>> {
    let grid = match v {
        None | Some(Value::Null) => vec![0.0, horizon],
        Some(v) => {
            let a = v.as_array().ok_or_else(|| Error::Parse("grid must be an array".into()))?;
            a.iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::Parse("grid entries must be numbers".into())))
                .collect::<Result<Vec<_>>>()?
        }
    };
    if grid.len() < 2 {
        return Err(Error::Validation("grid needs at least two points".into()));
    }
    if grid[0] != 0.0 || (grid[grid.len() - 1] - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::Validation(format!("grid must start at 0 and end at T = {horizon}")));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("grid must be strictly increasing".into()));
    }
    Ok(grid)
}

fn get_usize(v: &Value, key: &str) -> Result<usize> {
    v.get(key)
        .and_then(Value::as_u64)
        .map(|x| x as usize)
        .ok_or_else(|| Error::Parse(format!("missing or invalid integer field `{key}`")))
}

/// Parses and validates a problem document.
pub fn parse_problem(text: &str) -> Result<GameProblem> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let n = get_usize(&v, "n")?;
    let m1 = get_usize(&v, "m1")?;
    let m2 = get_usize(&v, "m2")?;
    let r = get_usize(&v, "r")?;
    let horizon = v
        .get("T")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Parse("missing or invalid field `T`".into()))?;
    if !(horizon > 0.0) {
        return Err(Error::Validation("T must be positive".into()));
    }
    let grid = parse_grid(v.get("grid"), horizon)?;
    let c = v
        .get("coefficients")
        .ok_or_else(|| Error::Parse("missing `coefficients`".into()))?;
    let m = m1 + m2;
    let sched = |key: &str, rows: usize, cols: usize| -> Result<Schedule> {
        match c.get(key) {
            Some(x) => parse_schedule(key, x, &grid),
            None if key.ends_with("bar") => Schedule::new(grid.clone(), vec![Mat::zeros(rows, cols); grid.len()])
                .map_err(Error::Validation),
            None => Err(Error::Parse(format!("missing coefficient `{key}`"))),
        }
    };
    let list = |key: &str, rows: usize, cols: usize| -> Result<Vec<Schedule>> {
        match c.get(key) {
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(k, x)| parse_schedule(&format!("{key}[{k}]"), x, &grid))
                .collect(),
            Some(_) => Err(Error::Parse(format!("`{key}` must be a list over k = 0..r"))),
            None if key.ends_with("bar") => Ok((0..=r)
                .map(|_| Schedule::new(grid.clone(), vec![Mat::zeros(rows, cols); grid.len()]).unwrap())
                .collect()),
            None => Err(Error::Parse(format!("missing coefficient `{key}`"))),
        }
    };
    let terminal = |key: &str| -> Result<Mat> {
        match c.get(key) {
            Some(x) => parse_matrix(key, x),
            None if key == "Gbar_T" => Ok(Mat::zeros(n, n)),
            None => Err(Error::Parse(format!("missing coefficient `{key}`"))),
        }
    };
    let lq = LqProblem {
        n,
        m,
        noise_dim: r,
        horizon,
        a: list("A", n, n)?,
        a_bar: list("Abar", n, n)?,
        b: list("B", n, m)?,
        b_bar: list("Bbar", n, m)?,
        q: sched("M", n, n)?,
        q_bar: sched("Mbar", n, n)?,
        s: sched("L", n, m)?,
        s_bar: sched("Lbar", n, m)?,
        r: sched("R", m, m)?,
        r_bar: sched("Rbar", m, m)?,
        g: terminal("G_T")?,
        g_bar: terminal("Gbar_T")?,
    };
    GameProblem::new(lq, m1, m2)
}

pub fn load_problem(path: &Path) -> Result<GameProblem> {
    let text = std::fs::read_to_string(path)?;
    parse_problem(&text)
}

pub fn matrix_to_json(m: &Mat) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| Value::from(m[(i, j)])).collect()))
            .collect(),
    )
}

fn schedule_to_json(s: &Schedule, grid: &[f64]) -> Value {
    Value::Array(grid.iter().map(|&t| matrix_to_json(&s.eval(t))).collect())
}

/// Serializes a problem, sampling every coefficient on the union of knots.
pub fn problem_to_json(p: &GameProblem) -> Value {
    let lq = &p.lq;
    let grid = lq.knots();
    let list = |v: &[Schedule]| Value::Array(v.iter().map(|s| schedule_to_json(s, &grid)).collect());
    serde_json::json!({
        "n": lq.n,
        "m1": p.m1,
        "m2": p.m2,
        "r": lq.noise_dim,
        "T": lq.horizon,
        "grid": grid,
        "coefficients": {
            "A": list(&lq.a),
            "Abar": list(&lq.a_bar),
            "B": list(&lq.b),
            "Bbar": list(&lq.b_bar),
            "M": schedule_to_json(&lq.q, &grid),
            "Mbar": schedule_to_json(&lq.q_bar, &grid),
            "L": schedule_to_json(&lq.s, &grid),
            "Lbar": schedule_to_json(&lq.s_bar, &grid),
            "R": schedule_to_json(&lq.r, &grid),
            "Rbar": schedule_to_json(&lq.r_bar, &grid),
            "G_T": matrix_to_json(&lq.g),
            "Gbar_T": matrix_to_json(&lq.g_bar),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "n": 1, "m1": 1, "m2": 1, "r": 0, "T": 1.0,
        "coefficients": {
            "A": [[[0.0]]], "Abar": [[[0.0]]],
            "B": [[[1.0, 1.0]]], "Bbar": [[[0.0, 0.0]]],
            "M": [[0.0]], "Mbar": [[0.0]],
            "L": [[0.0, 0.0]], "Lbar": [[0.0, 0.0]],
            "R": [[1.0, 0.0], [0.0, -0.6666666666666666]], "Rbar": [[0.0, 0.0], [0.0, 0.0]],
            "G_T": [[-2.0]], "Gbar_T": [[0.0]]
        }
    }"#;

    #[test]
    fn loads_scalar_example() {
        let p = parse_problem(EXAMPLE).unwrap();
        assert_eq!((p.n(), p.m1, p.m2, p.lq.noise_dim), (1, 1, 1, 0));
        assert_eq!(p.lq.g[(0, 0)], -2.0);
        assert_eq!(p.lq.g_bar[(0, 0)], 0.0);
        let pv = p.partitioned();
        assert_eq!(pv.b1[0].eval(0.3)[(0, 0)], 1.0);
        assert_eq!(pv.b2[0].eval(0.3)[(0, 0)], 1.0);
        assert_eq!(pv.r11.eval(0.0)[(0, 0)], 1.0);
        assert_eq!(pv.r12.eval(0.0)[(0, 0)], 0.0);
        assert!((pv.r22.eval(1.0)[(0, 0)] + 2.0 / 3.0).abs() < 1e-15);
        let h = p.hatted();
        assert_eq!(h.r.eval(0.5), p.lq.r.eval(0.5));
        assert_eq!(h.b[0].eval(0.5), p.lq.b[0].eval(0.5));
    }

    #[test]
    fn rejects_asymmetric_weight() {
        let text = EXAMPLE.replace(
            r#""R": [[1.0, 0.0], [0.0, -0.6666666666666666]]"#,
            r#""R": [[1.0, 0.1], [0.1001, 1.0]]"#,
        );
        assert!(matches!(parse_problem(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn constant_schedule_evaluates_everywhere() {
        let text = EXAMPLE.replace(r#""T": 1.0,"#, r#""T": 1.0, "grid": [0.0, 1.0],"#);
        let p = parse_problem(&text).unwrap();
        assert_eq!(p.lq.g[(0, 0)], -2.0);
        assert_eq!(p.lq.b[0].eval(0.37), Mat::from_row_slice(1, 2, &[1.0, 1.0]));
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(parse_problem("{"), Err(Error::Parse(_))));
        let bad_grid = EXAMPLE.replace(r#""T": 1.0,"#, r#""T": 1.0, "grid": [0.0, 0.5, 0.5, 1.0],"#);
        assert!(matches!(parse_problem(&bad_grid), Err(Error::Validation(_))));
        let bad_dim = EXAMPLE.replace(r#""m2": 1"#, r#""m2": 2"#);
        assert!(matches!(parse_problem(&bad_dim), Err(Error::Validation(_))));
        let no_follower = EXAMPLE.replace(r#""m1": 1, "m2": 1"#, r#""m1": 2, "m2": 0"#);
        assert!(matches!(parse_problem(&no_follower), Err(Error::Validation(_))));
    }

    #[test]
    fn scalar_hatted_sum() {
        let mut lq = LqProblem::zeros(1, 2, 0, 1.0);
        lq.a[0] = Schedule::constant(Mat::from_element(1, 1, 2.0), 1.0);
        lq.a_bar[0] = Schedule::constant(Mat::from_element(1, 1, 3.0), 1.0);
        assert_eq!(lq.hatted().a[0].eval(0.2)[(0, 0)], 5.0);
    }

    #[test]
    fn partition_round_trip() {
        let grid = vec![0.0, 0.5, 1.0];
        let mut lq = LqProblem::zeros(2, 3, 1, 1.0);
        lq.s = Schedule::sample(&grid, |t| Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64 * (1.0 + t)));
        lq.b[1] = Schedule::sample(&grid, |t| Mat::from_fn(2, 3, |i, j| t - (i + j) as f64));
        lq.r = Schedule::sample(&grid, |t| Mat::from_fn(3, 3, |i, j| (i + j) as f64 + t));
        let p = GameProblem::new(lq, 2, 1).unwrap();
        let pv = p.partitioned();
        assert_eq!(pv.s1.eval(0.5), p.lq.s.eval(0.5).columns(0, 2).into_owned());
        let (s, _) = pv.reassemble_s();
        assert_eq!(s.samples(), p.lq.s.samples());
        let (b1, _) = pv.reassemble_b(1);
        assert_eq!(b1.samples(), p.lq.b[1].samples());
        let (r, _) = pv.reassemble_r();
        assert_eq!(r.samples(), p.lq.r.samples());
    }

    #[test]
    fn swap_roles_is_an_involution() {
        let mut lq = LqProblem::zeros(1, 3, 0, 1.0);
        lq.r = Schedule::constant(Mat::from_fn(3, 3, |i, j| (1 + i + j) as f64 + if i == j { 5.0 } else { 0.0 }), 1.0);
        lq.b[0] = Schedule::constant(Mat::from_row_slice(1, 3, &[1.0, 2.0, 3.0]), 1.0);
        let p = GameProblem::new(lq, 1, 2).unwrap();
        let s = p.swap_roles();
        assert_eq!((s.m1, s.m2), (2, 1));
        assert_eq!(s.lq.b[0].eval(0.0), Mat::from_row_slice(1, 3, &[2.0, 3.0, 1.0]));
        let back = s.swap_roles();
        assert_eq!(back.lq.r.samples(), p.lq.r.samples());
        assert_eq!(back.lq.b[0].samples(), p.lq.b[0].samples());
    }

    #[test]
    fn json_round_trip() {
        let p = parse_problem(EXAMPLE).unwrap();
        let text = problem_to_json(&p).to_string();
        let q = parse_problem(&text).unwrap();
        assert_eq!(q.lq.r.eval(0.4), p.lq.r.eval(0.4));
        assert_eq!(q.lq.g, p.lq.g);
    }
}
