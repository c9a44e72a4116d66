use std::path::Path;

use mfgame::auxiliary::{
    check_c1, check_c2, check_c3, comparison_bounds, constructive_certificates, transform_times, ConditionReport, Construction,
};
use mfgame::builtin::worked_example;
use mfgame::export;
use mfgame::problem::{parse_problem, GameProblem};
use mfgame::riccati::{solve_coupled, CoupledSolution, Regime};
use mfgame::simulate::{evaluate_cost, simulate_paths, CostWeights, SimConfig};
use mfgame::synthesis::synthesize;
use mfgame::verify::{run_suite, run_worked_example, value_at_start, SuiteConfig, SuiteLevel};
use serde_json::{json, Value};

use crate::inputs::{parse_certificates, parse_strategy, parse_x0, zeros_like, CertificateFile, Frame};
use crate::output::{read_input, CliError, CliResult, OutDir, RunManifest};
use crate::Suite;

fn load(path: &Path) -> CliResult<(Vec<u8>, GameProblem)> {
    let bytes = read_input(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::Validation(format!("{}: not UTF-8", path.display())))?;
    let p = parse_problem(text)?;
    Ok((bytes, p))
}

pub fn solve(problem: &Path, step: f64, out: &Path) -> CliResult<()> {
    let (bytes, p) = load(problem)?;
    let sol = solve_coupled(&p, step)?;
    let dir = OutDir::create(out)?;
    let manifest = RunManifest::new("solve").input("problem", &bytes).param("step", step);
    dir.write("X.csv", export::trajectory_csv("X", &sol.x).as_bytes())?;
    dir.write("Xhat.csv", export::trajectory_csv("Xhat", &sol.xhat).as_bytes())?;
    dir.write("sign_report.csv", export::sign_report_csv(&sol.report).as_bytes())?;
    dir.write_json("summary.json", &manifest, export::solve_summary(&sol))?;
    println!(
        "X: {}  Xhat: {}",
        export::trajectory_status(&sol.x)["status"].as_str().unwrap_or("?"),
        export::trajectory_status(&sol.xhat)["status"].as_str().unwrap_or("?")
    );
    Ok(())
}

struct CheckRun {
    frame: Frame,
    source: &'static str,
    sol: CoupledSolution,
    follower: Option<ConditionReport>,
    leader: Option<ConditionReport>,
    notes: Vec<String>,
}

fn frame_problem(p: &GameProblem, frame: Frame) -> GameProblem {
    match frame {
        Frame::Standard => p.clone(),
        Frame::Swapped => p.swap_roles(),
    }
}

fn constructive_run(p: &GameProblem, step: f64) -> CliResult<CheckRun> {
    let sol = solve_coupled(p, step)?;
    let (frame, construction) = if sol.is_global() && sol.regime_holds(Regime::Stackelberg) {
        (Frame::Standard, Construction::WithFeedthrough)
    } else if sol.is_global() && sol.regime_holds(Regime::BlockSign) {
        (Frame::Swapped, Construction::WithoutFeedthrough)
    } else {
        (Frame::Standard, Construction::WithFeedthrough)
    };
    let game = frame_problem(p, frame);
    let sol = match frame {
        Frame::Standard => sol,
        Frame::Swapped => solve_coupled(&game, step)?,
    };
    let certs = constructive_certificates(&game, &sol, construction)?;
    let mut notes = Vec::new();
    if !sol.is_global() {
        notes.push("Riccati solution is not global; certificates are held constant below the stopping time".into());
    }
    let leader = check_c2(&game, &certs.phi, &certs.phihat, step)?;
    let follower = match (&certs.k, &certs.w, &certs.khat, &certs.what) {
        (Some(k), Some(w), Some(kh), Some(wh)) => Some(match construction {
            Construction::WithFeedthrough => check_c1(&game, k, w, kh, wh, step)?,
            Construction::WithoutFeedthrough => check_c3(&game, k, kh, step)?,
        }),
        _ => {
            notes.push(format!(
                "follower certificates unavailable: {}",
                certs.note.clone().unwrap_or_else(|| "signature factorization failed".into())
            ));
            None
        }
    };
    Ok(CheckRun { frame, source: "constructive", sol, follower, leader: Some(leader), notes })
}

fn explicit_run(p: &GameProblem, certs: &CertificateFile, step: f64) -> CliResult<CheckRun> {
    let game = frame_problem(p, certs.frame);
    let sol = solve_coupled(&game, step)?;
    let times = transform_times(game.horizon(), step)?;
    let resolve = |e: &Option<crate::inputs::CertEntry>| e.as_ref().map(|e| e.resolve(&sol.x, &times)).transpose();
    let (n, m1, m2, t) = (game.n(), game.m1, game.m2, game.horizon());
    let k = resolve(&certs.k)?;
    let w = resolve(&certs.w)?;
    let khat = resolve(&certs.khat)?.unwrap_or_else(|| zeros_like(m2, n, t));
    let what = resolve(&certs.what)?.unwrap_or_else(|| zeros_like(m2, m1, t));
    let phi = resolve(&certs.phi)?;
    let phihat = resolve(&certs.phihat)?.unwrap_or_else(|| zeros_like(m1, n, t));
    let follower = match (k, w) {
        (Some(k), Some(w)) => Some(check_c1(&game, &k, &w, &khat, &what, step)?),
        (Some(k), None) => Some(check_c3(&game, &k, &khat, step)?),
        _ => None,
    };
    let leader = phi.map(|phi| check_c2(&game, &phi, &phihat, step)).transpose()?;
    Ok(CheckRun { frame: certs.frame, source: "file", sol, follower, leader, notes: Vec::new() })
}

pub fn check(problem: &Path, certificates: Option<&Path>, step: f64, out: &Path) -> CliResult<()> {
    let (bytes, p) = load(problem)?;
    let mut manifest = RunManifest::new("check").input("problem", &bytes).param("step", step);
    let spec = match certificates {
        None => None,
        Some(path) => {
            let cb = read_input(path)?;
            manifest = manifest.input("certificates", &cb);
            let text = std::str::from_utf8(&cb).map_err(|_| CliError::Validation("certificates: not UTF-8".into()))?;
            parse_certificates(text, p.horizon())?
        }
    };
    let run = match &spec {
        None => constructive_run(&p, step)?,
        Some(c) => explicit_run(&p, c, step)?,
    };
    let dir = OutDir::create(out)?;
    let mut conditions = Vec::new();
    for report in run.follower.iter().chain(run.leader.iter()) {
        let label = format!("{:?}", report.condition);
        dir.write(&format!("witness_{label}_Y.csv"), export::trajectory_csv("Y", &report.witness.x).as_bytes())?;
        dir.write(&format!("witness_{label}_Yhat.csv"), export::trajectory_csv("Yhat", &report.witness.xhat).as_bytes())?;
        conditions.push(export::condition_json(report));
        println!("{label}: {}", if report.holds { "holds" } else { "fails" });
    }
    let all_hold = run.follower.as_ref().is_some_and(|c| c.holds) && run.leader.as_ref().is_some_and(|c| c.holds);
    dir.write_json(
        "conditions.json",
        &manifest,
        json!({
            "frame": run.frame.label(),
            "certificates": run.source,
            "conditions": conditions,
            "all_hold": all_hold,
            "notes": run.notes,
        }),
    )?;
    if let (Some(f), Some(l)) = (&run.follower, &run.leader) {
        let cmp = comparison_bounds(&run.sol.x, &run.sol.xhat, f, l)?;
        dir.write("comparison.csv", export::comparison_csv(&cmp).as_bytes())?;
        dir.write_json("comparison.json", &manifest, export::comparison_json(&cmp))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    problem: &Path,
    strategy: &str,
    x0: &str,
    paths: usize,
    dt: f64,
    seed: u64,
    per_path: bool,
    out: &Path,
) -> CliResult<()> {
    let (bytes, p) = load(problem)?;
    let x_s = parse_x0(x0, p.n())?;
    let cfg = SimConfig::new(paths, dt, seed);
    let mut manifest = RunManifest::new("simulate")
        .input("problem", &bytes)
        .param("x0", x_s.iter().copied().collect::<Vec<f64>>())
        .param("paths", paths)
        .param("dt", dt)
        .param("seed", seed);
    let mut body = serde_json::Map::new();
    let (game, control) = if strategy == "equilibrium" {
        manifest = manifest.param("strategy", "equilibrium").param("step", dt);
        let eq = synthesize(&p, dt)?;
        let value = value_at_start(&eq.solution.xhat, &x_s)?;
        body.insert("orientation".into(), json!(eq.orientation));
        body.insert("value".into(), json!(value));
        let u = eq.strategies.joint_control();
        (eq.game, u)
    } else {
        let sb = read_input(Path::new(strategy))?;
        manifest = manifest.param("strategy", "file").input("strategy", &sb);
        let text = std::str::from_utf8(&sb).map_err(|_| CliError::Validation("strategy: not UTF-8".into()))?;
        let u = parse_strategy(text, &p)?;
        (p, u)
    };
    let ensemble = simulate_paths(&game.lq, &control, &x_s, &cfg)?;
    let estimate = evaluate_cost(&game.lq, &ensemble);
    body.insert("estimate".into(), serde_json::to_value(estimate).expect("estimate serializes"));
    let dir = OutDir::create(out)?;
    if per_path {
        let grid = cfg.grid(game.horizon())?;
        let weights = CostWeights::base(&game.lq, &grid);
        let costs = ensemble.map_paths(|path| weights.path_cost(grid.step(), path));
        let mut csv = String::from("path,fluctuation_cost\n");
        for (i, c) in costs.iter().enumerate() {
            csv.push_str(&format!("{i},{}\n", export::num(*c)));
        }
        dir.write("per_path.csv", csv.as_bytes())?;
    }
    dir.write_json("cost.json", &manifest, Value::Object(body))?;
    println!("J = {:.10} ± {:.3e}", estimate.mean, estimate.std_error);
    Ok(())
}

pub fn verify(problem: Option<&Path>, example: bool, suite: Suite, seed: u64, out: &Path) -> CliResult<()> {
    let level = match suite {
        Suite::Fast => SuiteLevel::Fast,
        Suite::Full => SuiteLevel::Full,
    };
    let mut manifest = RunManifest::new("verify").param("suite", format!("{level:?}").to_lowercase()).param("seed", seed);
    let (p, worked) = if example {
        manifest = manifest.param("problem", "builtin:worked_example");
        let p = worked_example();
        let sc = SuiteConfig::new(level, p.horizon(), seed);
        let w = run_worked_example(sc.step)?;
        (p, Some(w))
    } else {
        let path = problem.expect("clap requires a problem without --example-sun");
        let (bytes, p) = load(path)?;
        manifest = manifest.input("problem", &bytes);
        (p, None)
    };
    let sc = SuiteConfig::new(level, p.horizon(), seed);
    manifest = manifest
        .param("step", sc.step)
        .param("paths", sc.sim.n_paths)
        .param("dt", sc.sim.dt)
        .param("n_probes", sc.n_probes)
        .param("n_controls", sc.n_controls);
    let report = run_suite(&p, &sc)?;
    let mut failed: Vec<String> = report.outcomes.iter().filter(|o| o.severe()).map(|o| o.name.clone()).collect();
    if let Some(w) = &worked {
        failed.extend(w.outcomes.iter().filter(|o| !o.pass).map(|o| o.name.clone()));
    }
    for o in worked.iter().flat_map(|w| w.outcomes.iter()).chain(&report.outcomes) {
        println!("{} {}", if o.pass { "PASS" } else { "FAIL" }, o.name);
    }
    let dir = OutDir::create(out)?;
    dir.write_json(
        "verify_report.json",
        &manifest,
        json!({
            "pass": failed.is_empty(),
            "worked_example": worked,
            "suite": report,
        }),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(failed.join(", ")))
    }
}
