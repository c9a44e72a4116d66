use mfgame::linalg::Mat;
use mfgame::problem::{parse_problem, problem_to_json, GameProblem, LqProblem};
use mfgame::schedule::Schedule;
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 1..6).prop_map(|gaps| {
        let total: f64 = gaps.iter().sum();
        let mut t = vec![0.0];
        let mut acc = 0.0;
        for g in &gaps[..gaps.len() - 1] {
            acc += g / total;
            t.push(acc);
        }
        t.push(1.0);
        t
    })
}

fn random_schedule(times: &[f64], rows: usize, cols: usize, seed: u64, symmetric: bool) -> Schedule {
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let samples = times
        .iter()
        .map(|_| {
            let m = Mat::from_fn(rows, cols, |_, _| next());
            if symmetric {
                (&m + m.transpose()) * 0.5
            } else {
                m
            }
        })
        .collect();
    Schedule::new(times.to_vec(), samples).unwrap()
}

fn random_problem(times: &[f64], n: usize, m1: usize, m2: usize, r: usize, seed: u64) -> GameProblem {
    let m = m1 + m2;
    let mut lq = LqProblem::zeros(n, m, r, 1.0);
    let s = |rows, cols, k: u64, sym| random_schedule(times, rows, cols, seed.wrapping_add(k), sym);
    lq.a = (0..=r).map(|k| s(n, n, 10 + k as u64, false)).collect();
    lq.a_bar = (0..=r).map(|k| s(n, n, 20 + k as u64, false)).collect();
    lq.b = (0..=r).map(|k| s(n, m, 30 + k as u64, false)).collect();
    lq.b_bar = (0..=r).map(|k| s(n, m, 40 + k as u64, false)).collect();
    lq.q = s(n, n, 1, true);
    lq.q_bar = s(n, n, 2, true);
    lq.s = s(n, m, 3, false);
    lq.s_bar = s(n, m, 4, false);
    lq.r = s(m, m, 5, true);
    lq.r_bar = s(m, m, 6, true);
    lq.g = Mat::identity(n, n);
    lq.g_bar = Mat::identity(n, n) * 0.5;
    GameProblem::new(lq.validated().unwrap(), m1, m2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn partition_reassembles_bitwise(times in grid_strategy(), n in 1usize..3, m1 in 1usize..3, m2 in 1usize..3, r in 0usize..3, seed: u64) {
        let p = random_problem(&times, n, m1, m2, r, seed);
        let v = p.partitioned();
        for k in 0..=r {
            let (b, bb) = v.reassemble_b(k);
            prop_assert_eq!(b.samples(), p.lq.b[k].samples());
            prop_assert_eq!(bb.samples(), p.lq.b_bar[k].samples());
        }
        let (s, sb) = v.reassemble_s();
        prop_assert_eq!(s.samples(), p.lq.s.samples());
        prop_assert_eq!(sb.samples(), p.lq.s_bar.samples());
        let (r_, rb) = v.reassemble_r();
        prop_assert_eq!(r_.samples(), p.lq.r.samples());
        prop_assert_eq!(rb.samples(), p.lq.r_bar.samples());
    }

    #[test]
    fn hatted_view_is_linear_in_the_bars(times in grid_strategy(), alpha in -3.0f64..3.0, seed: u64) {
        let p = random_problem(&times, 2, 1, 1, 1, seed);
        let mut scaled = p.lq.clone();
        scaled.a_bar = scaled.a_bar.iter().map(|s| s.scale(alpha)).collect();
        let h = scaled.hatted();
        for k in 0..2 {
            for (i, t) in times.iter().enumerate() {
                let expected = p.lq.a[k].samples()[i].clone() + p.lq.a_bar[k].samples()[i].clone() * alpha;
                prop_assert_eq!(h.a[k].eval(*t), expected);
            }
        }
    }

    #[test]
    fn schedules_return_stored_samples_at_knots(times in grid_strategy(), seed: u64) {
        let s = random_schedule(&times, 2, 3, seed, false);
        for (t, m) in times.iter().zip(s.samples()) {
            prop_assert_eq!(&s.eval(*t), m);
        }
    }

    #[test]
    fn json_round_trip_preserves_samples(times in grid_strategy(), seed: u64) {
        let p = random_problem(&times, 2, 1, 2, 1, seed);
        let q = parse_problem(&problem_to_json(&p).to_string()).unwrap();
        prop_assert_eq!(q.lq.r.samples(), p.lq.r.samples());
        prop_assert_eq!(q.lq.b[1].samples(), p.lq.b[1].samples());
        prop_assert_eq!(q.lq.g_bar, p.lq.g_bar);
    }
}

#[test]
fn hatted_terminal_is_the_sum() {
    let times = [0.0, 0.5, 1.0];
    let p = random_problem(&times, 2, 1, 1, 0, 3);
    assert_eq!(p.hatted().g, &p.lq.g + &p.lq.g_bar);
}
