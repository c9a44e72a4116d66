//! Small dense linear-algebra helpers.
//!
//! The symmetric-indefinite factorization is a Bunch–Kaufman LDLᵀ with
//! 1×1 and 2×2 pivots. Eigenvalue work is delegated to nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Pivot growth threshold of the Bunch–Kaufman strategy.
const BK_ALPHA: f64 = 0.640_388_203_202_208_0; // (1 + sqrt(17)) / 8

pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn has_non_finite(a: &Mat) -> bool {
    a.iter().any(|v| !v.is_finite())
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn sym_eigenvalues(a: &Mat) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let e = SymmetricEigen::new(symmetrize(a));
    let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Smallest eigenvalue; `+inf` for an empty matrix.
pub fn min_eig(a: &Mat) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

/// Largest eigenvalue; `-inf` for an empty matrix.
pub fn max_eig(a: &Mat) -> f64 {
    sym_eigenvalues(a).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Spectral condition number of a symmetric matrix, `inf` when singular.
pub fn sym_condition(a: &Mat) -> f64 {
    let ev = sym_eigenvalues(a);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for v in ev {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn spectral_map(a: &Mat, f: impl Fn(f64) -> f64) -> Option<Mat> {
    let e = SymmetricEigen::new(symmetrize(a));
    if e.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let d = Mat::from_diagonal(&e.eigenvalues.map(f));
    Some(&e.eigenvectors * d * e.eigenvectors.transpose())
}

/// Symmetric square root of a positive definite matrix.
pub fn sqrt_spd(a: &Mat) -> Option<Mat> {
    if a.nrows() == 0 {
        return Some(a.clone());
    }
    spectral_map(a, f64::sqrt)
}

/// Inverse symmetric square root of a positive definite matrix.
pub fn inv_sqrt_spd(a: &Mat) -> Option<Mat> {
    if a.nrows() == 0 {
        return Some(a.clone());
    }
    spectral_map(a, |l| 1.0 / l.sqrt())
}

/// Counts of negative, zero and positive eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

#[derive(Debug, Clone, Copy)]
enum Pivot {
    One(f64),
    Two([[f64; 2]; 2]),
}

/// Bunch–Kaufman factorization `P A Pᵀ = L D Lᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymIndefinite {
    n: usize,
    perm: Vec<usize>,
    l: Mat,
    pivots: Vec<(usize, Pivot)>,
    singular: bool,
}

impl SymIndefinite {
    /// Factorizes the symmetric part of `a`. Never fails; check [`Self::is_singular`].
    pub fn new(a: &Mat) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "LDLt needs a square matrix");
        let n = a.nrows();
        let mut w = symmetrize(a);
        let mut l = Mat::identity(n, n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::new();
        let mut singular = false;
        let mut k = 0;
        while k < n {
            let absakk = w[(k, k)].abs();
            let (imax, colmax) = if k + 1 < n {
                let mut best = (k + 1, w[(k + 1, k)].abs());
                for i in k + 2..n {
                    if w[(i, k)].abs() > best.1 {
                        best = (i, w[(i, k)].abs());
                    }
                }
                best
            } else {
                (k, 0.0)
            };
            let mut kstep = 1;
            let mut kp = k;
            if absakk.max(colmax) == 0.0 {
                singular = true;
            } else if absakk < BK_ALPHA * colmax {
                let mut rowmax: f64 = 0.0;
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(w[(imax, j)].abs());
                    }
                }
                if absakk >= BK_ALPHA * colmax * (colmax / rowmax) {
                    kp = k;
                } else if w[(imax, imax)].abs() >= BK_ALPHA * rowmax {
                    kp = imax;
                } else {
                    kp = imax;
                    kstep = 2;
                }
            }
            let kk = k + kstep - 1;
            if kp != kk {
                w.swap_rows(kk, kp);
                w.swap_columns(kk, kp);
                perm.swap(kk, kp);
                for c in 0..k {
                    l.swap((kk, c), (kp, c));
                }
            }
            if kstep == 1 {
                let d = w[(k, k)];
                pivots.push((k, Pivot::One(d)));
                if d == 0.0 {
                    singular = true;
                } else {
                    for i in k + 1..n {
                        l[(i, k)] = w[(i, k)] / d;
                    }
                    for j in k + 1..n {
                        let ajk = w[(j, k)];
                        for i in k + 1..n {
                            w[(i, j)] -= l[(i, k)] * ajk;
                        }
                    }
                }
            } else {
                let d = [[w[(k, k)], w[(k + 1, k)]], [w[(k + 1, k)], w[(k + 1, k + 1)]]];
                pivots.push((k, Pivot::Two(d)));
                let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
                if det == 0.0 {
                    singular = true;
                } else {
                    let inv = [[d[1][1] / det, -d[0][1] / det], [-d[1][0] / det, d[0][0] / det]];
                    for i in k + 2..n {
                        let (a0, a1) = (w[(i, k)], w[(i, k + 1)]);
                        l[(i, k)] = a0 * inv[0][0] + a1 * inv[1][0];
                        l[(i, k + 1)] = a0 * inv[0][1] + a1 * inv[1][1];
                    }
                    for j in k + 2..n {
                        let (b0, b1) = (w[(j, k)], w[(j, k + 1)]);
                        for i in k + 2..n {
                            w[(i, j)] -= l[(i, k)] * b0 + l[(i, k + 1)] * b1;
                        }
                    }
                }
            }
            k += kstep;
        }
        Self { n, perm, l, pivots, singular }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Inertia read off the block-diagonal factor (Sylvester's law).
    pub fn inertia(&self) -> Inertia {
        let mut out = Inertia { negative: 0, zero: 0, positive: 0 };
        let mut count = |v: f64| {
            if v > 0.0 {
                out.positive += 1
            } else if v < 0.0 {
                out.negative += 1
            } else {
                out.zero += 1
            }
        };
        for (_, p) in &self.pivots {
            match *p {
                Pivot::One(d) => count(d),
                Pivot::Two(d) => {
                    let tr = d[0][0] + d[1][1];
                    let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
                    let disc = ((d[0][0] - d[1][1]).powi(2) + 4.0 * d[0][1] * d[1][0]).max(0.0).sqrt();
                    if det == 0.0 {
                        count(0.0);
                        count(tr);
                    } else {
                        count(0.5 * (tr - disc));
                        count(0.5 * (tr + disc));
                    }
                }
            }
        }
        out
    }

    /// Solves `A X = B`. Returns `None` when the factor is singular.
    pub fn solve(&self, b: &Mat) -> Option<Mat> {
        if self.singular {
            return None;
        }
        assert_eq!(b.nrows(), self.n);
        let n = self.n;
        let mut y = Mat::zeros(n, b.ncols());
        for i in 0..n {
            y.set_row(i, &b.row(self.perm[i]));
        }
        // forward: L z = y
        for c in 0..b.ncols() {
            for j in 0..n {
                let yj = y[(j, c)];
                if yj != 0.0 {
                    for i in j + 1..n {
                        y[(i, c)] -= self.l[(i, j)] * yj;
                    }
                }
            }
        }
        // block diagonal
        for (k, p) in &self.pivots {
            let k = *k;
            match *p {
                Pivot::One(d) => {
                    for c in 0..b.ncols() {
                        y[(k, c)] /= d;
                    }
                }
                Pivot::Two(d) => {
                    let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
                    for c in 0..b.ncols() {
                        let (a0, a1) = (y[(k, c)], y[(k + 1, c)]);
                        y[(k, c)] = (d[1][1] * a0 - d[0][1] * a1) / det;
                        y[(k + 1, c)] = (-d[1][0] * a0 + d[0][0] * a1) / det;
                    }
                }
            }
        }
        // backward: Lᵀ x = z
        for c in 0..b.ncols() {
            for j in (0..n).rev() {
                let mut s = y[(j, c)];
                for i in j + 1..n {
                    s -= self.l[(i, j)] * y[(i, c)];
                }
                y[(j, c)] = s;
            }
        }
        let mut x = Mat::zeros(n, b.ncols());
        for i in 0..n {
            x.set_row(self.perm[i], &y.row(i));
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Mat> {
        self.solve(&Mat::identity(self.n, self.n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> Mat {
        // cheap deterministic pseudo-random fill
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let a = Mat::from_fn(n, n, |_, _| next());
        symmetrize(&a)
    }

    #[test]
    fn solves_indefinite_systems() {
        for seed in 0..40 {
            let n = 1 + (seed as usize % 6);
            let a = sample(n, seed);
            let b = Mat::from_fn(n, 2, |i, j| (i + 2 * j) as f64 - 1.5);
            let f = SymIndefinite::new(&a);
            let x = f.solve(&b).unwrap();
            assert!(max_abs_diff(&(&a * &x), &b) < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn zero_diagonal_forces_two_by_two_pivot() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let f = SymIndefinite::new(&a);
        assert_eq!(f.inertia(), Inertia { negative: 1, zero: 0, positive: 1 });
        let x = f.inverse().unwrap();
        assert!(max_abs_diff(&x, &a) < 1e-15);
    }

    #[test]
    fn inertia_matches_eigenvalues() {
        for seed in 100..160 {
            let n = 1 + (seed as usize % 5);
            let a = sample(n, seed);
            let ev = sym_eigenvalues(&a);
            let neg = ev.iter().filter(|v| **v < 0.0).count();
            let inert = SymIndefinite::new(&a).inertia();
            assert_eq!(inert.negative, neg);
            assert_eq!(inert.positive, n - neg);
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SymIndefinite::new(&a).is_singular());
        assert!(SymIndefinite::new(&Mat::zeros(3, 3)).is_singular());
    }

    #[test]
    fn square_roots() {
        let a = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sqrt_spd(&a).unwrap();
        assert!(max_abs_diff(&(&s * &s), &a) < 1e-12);
        let si = inv_sqrt_spd(&a).unwrap();
        assert!(max_abs_diff(&(&si * &s), &Mat::identity(2, 2)) < 1e-12);
        assert!(sqrt_spd(&(-a)).is_none());
    }
}
