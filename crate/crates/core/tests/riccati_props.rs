use mfgame::builtin::{random_game, random_regime_instance, worked_example};
use mfgame::linalg::{sym_eigenvalues, Mat};
use mfgame::problem::GameProblem;
use mfgame::riccati::{block_weight, factorize_signature, riccati_rhs, solve_coupled, Regime, RiccatiKernel, EPS_SIGN};
use mfgame::synthesis::{build_gains, gain_system, GAIN_TOL};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).abs().max() / a.abs().max().max(b.abs().max()).max(1.0)
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn trajectories_are_symmetric_and_hit_the_terminal(seed in 0u64..10_000, n in 1usize..3) {
        let p = random_game(seed, n);
        let sol = solve_coupled(&p, 1e-2).unwrap();
        let hat_g = &p.lq.g + &p.lq.g_bar;
        prop_assert_eq!(sol.x.values().last().unwrap(), &p.lq.g);
        if sol.xhat.is_global() || sol.xhat.values().len() > 1 {
            prop_assert_eq!(sol.xhat.values().last().unwrap(), &hat_g);
        }
        for y in sol.x.values().iter().chain(sol.xhat.values()) {
            prop_assert!((y - y.transpose()).abs().max() <= 1e-12 * y.abs().max().max(1e-300));
        }
    }

    #[test]
    fn leader_follower_verdict_implies_inertia(seed in 0u64..10_000, n in 1usize..3) {
        let p = random_game(seed, n);
        let sol = solve_coupled(&p, 1e-2).unwrap();
        for s in &sol.report.samples {
            if s.base.margin(Regime::Stackelberg) > EPS_SIGN {
                let w = block_weight(&p, &sol.x.eval(s.t).unwrap(), s.t, false);
                let ev = sym_eigenvalues(&w.full);
                let neg = ev.iter().filter(|v| **v < 0.0).count();
                let pos = ev.iter().filter(|v| **v > 0.0).count();
                prop_assert_eq!((neg, pos), (p.m1, p.m2));
            }
        }
    }

    #[test]
    fn block_sign_implies_swapped_leader_follower(seed in 0u64..10_000) {
        let mut p = random_game(seed, 1);
        // Flip R into the block-sign pattern: R11 > 0, R22 < 0.
        p.lq.r = p.lq.r.scale(-1.0);
        p.lq.r_bar = p.lq.r_bar.scale(-1.0);
        let sol = solve_coupled(&p, 1e-2).unwrap();
        for s in &sol.report.samples {
            if s.margin(Regime::BlockSign) > EPS_SIGN {
                prop_assert!(s.margin(Regime::SwappedStackelberg) > EPS_SIGN);
                let q = p.swap_roles();
                let w = block_weight(&q, &sol.x.eval(s.t).unwrap(), s.t, false);
                prop_assert!(factorize_signature(&w).is_ok());
            }
        }
    }

    #[test]
    fn factorization_on_solver_weights(seed in 0u64..500) {
        let (_, p) = random_regime_instance(seed, 2, 1e-2);
        let sol = solve_coupled(&p, 1e-2).unwrap();
        for i in (0..sol.x.values().len()).step_by(10) {
            let t = sol.x.grid().time(i);
            for hatted in [false, true] {
                let w = block_weight(&p, sol.x.at_index(i), t, hatted);
                let f = factorize_signature(&w).unwrap();
                prop_assert!(rel(&f.reconstruct(), &w.full) <= 1e-10);
                prop_assert!(sym_eigenvalues(&f.v11)[0] > 0.0);
                prop_assert!(sym_eigenvalues(&f.v22)[0] > 0.0);
            }
        }
    }

    #[test]
    fn zero_mean_field_collapses_the_pair(seed in 0u64..10_000, n in 1usize..3) {
        let p = random_game(seed, n);
        let q = GameProblem::new(p.lq.without_mean_field(), p.m1, p.m2).unwrap();
        let sol = solve_coupled(&q, 1e-2).unwrap();
        let k = sol.xhat.values().len().min(sol.x.values().len());
        let (xs, xh) = (sol.x.values(), sol.xhat.values());
        for j in 1..=k {
            prop_assert!((&xs[xs.len() - j] - &xh[xh.len() - j]).abs().max() <= 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn gains_are_stationary_and_consistent(seed in 0u64..500, n in 1usize..3) {
        let (_, p) = random_regime_instance(seed, n, 1e-2);
        let sol = solve_coupled(&p, 1e-2).unwrap();
        let g = build_gains(&p, &sol.x, &sol.xhat).unwrap();
        let hat = p.hatted();
        for (i, t) in g.times.iter().enumerate() {
            let sys = gain_system(&p, &hat, &sol.x.eval(*t).unwrap(), &sol.xhat.eval(*t).unwrap(), *t);
            let scale = sys.rhs.abs().max().max(1.0);
            prop_assert!((&sys.weight * &g.f[i] + &sys.rhs).abs().max() <= GAIN_TOL * scale);
            let scale = sys.rhs_hat.abs().max().max(1.0);
            prop_assert!((&sys.weight_hat * &g.fhat[i] + &sys.rhs_hat).abs().max() <= GAIN_TOL * scale);
        }
        prop_assert!(g.consistency_residual().unwrap() <= GAIN_TOL);
    }

    #[test]
    fn gains_are_invariant_under_cost_scaling(seed in 0u64..500) {
        let (_, p) = random_regime_instance(seed, 2, 1e-2);
        let scaled = GameProblem::new(p.lq.scale_costs(7.0), p.m1, p.m2).unwrap();
        let (a, b) = (solve_coupled(&p, 1e-2).unwrap(), solve_coupled(&scaled, 1e-2).unwrap());
        for (x, y) in a.x.values().iter().zip(b.x.values()) {
            prop_assert!(rel(&(x * 7.0), y) <= 1e-9);
        }
        let (ga, gb) = (build_gains(&p, &a.x, &a.xhat).unwrap(), build_gains(&scaled, &b.x, &b.xhat).unwrap());
        for i in 0..ga.times.len() {
            prop_assert!(rel(&ga.f[i], &gb.f[i]) <= 1e-9);
            prop_assert!(rel(&ga.fhat[i], &gb.fhat[i]) <= 1e-9);
        }
        let (ra, rb) = (ga.response.unwrap(), gb.response.unwrap());
        for i in 0..ga.times.len() {
            prop_assert!(rel(&ra.k[i], &rb.k[i]) <= 1e-9);
            prop_assert!(rel(&ra.w[i], &rb.w[i]) <= 1e-9);
        }
    }
}

/// Centered differences of the computed trajectory against `-rhs`, at two steps.
#[test]
fn residual_shrinks_quadratically() {
    let (_, p) = random_regime_instance(3, 2, 1e-2);
    let kernel = RiccatiKernel::base(&p.lq);
    let residual = |h: f64| -> f64 {
        let sol = solve_coupled(&p, h).unwrap();
        let v = sol.x.values();
        let grid = sol.x.grid();
        (1..v.len() - 1)
            .map(|i| {
                let fd = (&v[i + 1] - &v[i - 1]) / (2.0 * h);
                (fd + riccati_rhs(&kernel, &v[i], grid.time(i)).unwrap()).abs().max()
            })
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (residual(2e-2), residual(1e-2));
    assert!(fine < coarse);
    let ratio = coarse / fine;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn worked_example_regimes() {
    let sol = solve_coupled(&worked_example(), 1e-3).unwrap();
    assert!(sol.is_global());
    assert!(sol.regime_holds(Regime::BlockSign));
    assert!(sol.regime_holds(Regime::SwappedStackelberg));
    assert!(!sol.regime_holds(Regime::Stackelberg));
}
