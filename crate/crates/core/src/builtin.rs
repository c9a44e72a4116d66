//! Built-in problems: the scalar worked example, trivial and blow-up cases,
//! and seeded random instances in a prescribed sign regime.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{symmetrize, Mat};
use crate::problem::{GameProblem, LqProblem};
use crate::riccati::{solve_coupled, Regime};
use crate::schedule::Schedule;

/// `dx = (u1 + u2) dt` on `[0, 1]` with cost `½[-2x(1)² + ∫ u1² - ⅔ u2² dt]`.
///
/// The mean-field terminal weight is `Ḡ = 2`, so `Ĝ = 0` and `X̂ ≡ 0`.
/// Closed forms: `X(t) = 2/(t - 2)` and `X̂ ≡ 0`.
pub fn worked_example() -> GameProblem {
    let mut lq = LqProblem::zeros(1, 2, 0, 1.0);
    lq.b[0] = Schedule::constant(Mat::from_row_slice(1, 2, &[1.0, 1.0]), 1.0);
    lq.r = Schedule::constant(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0 / 3.0]), 1.0);
    lq.g = Mat::from_element(1, 1, -2.0);
    lq.g_bar = Mat::from_element(1, 1, 2.0);
    GameProblem::new(lq, 1, 1).expect("worked example is valid")
}

/// Closed-form `X` of [`worked_example`].
pub fn worked_example_x(t: f64) -> f64 {
    2.0 / (t - 2.0)
}

/// All coefficients zero except `R = diag(-I, I)`; the value is zero.
pub fn zero_problem(n: usize, m1: usize, m2: usize, noise_dim: usize, horizon: f64) -> GameProblem {
    let mut lq = LqProblem::zeros(n, m1 + m2, noise_dim, horizon);
    let mut r = Mat::identity(m1 + m2, m1 + m2);
    for i in 0..m1 {
        r[(i, i)] = -1.0;
    }
    lq.r = Schedule::constant(r, horizon);
    GameProblem::new(lq, m1, m2).expect("zero problem is valid")
}

/// Scalar problem with `R = I`, `B = (1, 1)`, `G = -2` on `[0, 1]`:
/// `X(t) = 1/(1.5 - 2t)` escapes at `t = 0.75`.
pub fn blowup_problem() -> GameProblem {
    let mut lq = LqProblem::zeros(1, 2, 0, 1.0);
    lq.b[0] = Schedule::constant(Mat::from_row_slice(1, 2, &[1.0, 1.0]), 1.0);
    lq.r = Schedule::constant(Mat::identity(2, 2), 1.0);
    lq.g = Mat::from_element(1, 1, -2.0);
    GameProblem::new(lq, 1, 1).expect("blow-up problem is valid")
}

/// Escape time of [`blowup_problem`].
pub const BLOWUP_TIME: f64 = 0.75;

fn uniform_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

fn uniform_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat {
    symmetrize(&uniform_mat(rng, n, n, scale))
}

/// Random constant-coefficient game with one noise and scalar players.
///
/// `R = [[-a, c], [c, b]]` with `a, b ∈ [1, 2]` puts the initial weight in
/// the leader-concave, follower-convex pattern; the state may have `n` = 1 or 2.
pub fn random_game(seed: u64, n: usize) -> GameProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 1.0;
    let (m, r) = (2, 1);
    let mut lq = LqProblem::zeros(n, m, r, t);
    let c = |m: Mat| Schedule::constant(m, t);
    lq.a[0] = c(uniform_mat(&mut rng, n, n, 0.5));
    lq.a[1] = c(uniform_mat(&mut rng, n, n, 0.3));
    lq.a_bar[0] = c(uniform_mat(&mut rng, n, n, 0.3));
    lq.a_bar[1] = c(uniform_mat(&mut rng, n, n, 0.2));
    lq.b[0] = c(uniform_mat(&mut rng, n, m, 1.0));
    lq.b[1] = c(uniform_mat(&mut rng, n, m, 0.3));
    lq.b_bar[0] = c(uniform_mat(&mut rng, n, m, 0.3));
    lq.b_bar[1] = c(uniform_mat(&mut rng, n, m, 0.2));
    lq.q = c(uniform_sym(&mut rng, n, 0.5));
    lq.q_bar = c(uniform_sym(&mut rng, n, 0.3));
    lq.s = c(uniform_mat(&mut rng, n, m, 0.2));
    lq.s_bar = c(uniform_mat(&mut rng, n, m, 0.1));
    let a = rng.gen_range(1.0..2.0);
    let b = rng.gen_range(1.0..2.0);
    let cc = rng.gen_range(-0.3..0.3);
    lq.r = c(Mat::from_row_slice(2, 2, &[-a, cc, cc, b]));
    lq.r_bar = c(uniform_sym(&mut rng, 2, 0.2));
    lq.g = uniform_sym(&mut rng, n, 0.5);
    lq.g_bar = uniform_sym(&mut rng, n, 0.3);
    GameProblem::new(lq.validated().expect("random game is valid"), 1, 1).expect("partition is valid")
}

/// First `random_game(seed', n)` with `seed' = seed, seed + 1, …` whose
/// pair `(X, X̂)` is global at step `h` with the leader/follower pattern
/// holding for both weights. Returns the accepted seed with the game.
pub fn random_regime_instance(seed: u64, n: usize, h: f64) -> (u64, GameProblem) {
    for k in 0..10_000u64 {
        let s = seed.wrapping_add(k);
        let p = random_game(s, n);
        if let Ok(sol) = solve_coupled(&p, h) {
            if sol.is_global() && sol.regime_holds(Regime::Stackelberg) {
                return (s, p);
            }
        }
    }
    panic!("no regime instance found from seed {seed}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_hatted_terminal_is_zero() {
        let p = worked_example();
        assert_eq!(p.hatted().g[(0, 0)], 0.0);
    }

    #[test]
    fn random_instances_are_reproducible() {
        let (s1, p1) = random_regime_instance(7, 2, 1e-2);
        let (s2, p2) = random_regime_instance(7, 2, 1e-2);
        assert_eq!(s1, s2);
        assert_eq!(p1.lq.a[0].eval(0.0), p2.lq.a[0].eval(0.0));
    }
}
