//! CSV and JSON renderings of solver and checker results.

use serde_json::{json, Value};

use crate::auxiliary::{ComparisonReport, ConditionReport, ConditionSummary};
use crate::linalg::Mat;
use crate::riccati::{CoupledSolution, RiccatiTrajectory, SignReport, Termination, WeightMargins};
use crate::synthesis::GainSchedule;

/// Seventeen significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn matrix_header(name: &str, rows: usize, cols: usize, out: &mut Vec<String>) {
    for i in 0..rows {
        for j in 0..cols {
            out.push(format!("{name}[{i}][{j}]"));
        }
    }
}

fn push_row_major(m: &Mat, out: &mut Vec<String>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(num(m[(i, j)]));
        }
    }
}

/// `t, Y[0][0], Y[0][1], …` with one row per computed grid time, ascending.
pub fn trajectory_csv(name: &str, tr: &RiccatiTrajectory) -> String {
    let n = tr.values().first().map_or(0, |m| m.nrows());
    let mut header = vec!["t".to_string()];
    matrix_header(name, n, n, &mut header);
    let mut lines = vec![header.join(",")];
    for (t, v) in tr.times().iter().zip(tr.values()) {
        let mut row = vec![num(*t)];
        push_row_major(v, &mut row);
        lines.push(row.join(","));
    }
    lines.join("\n") + "\n"
}

fn margin_columns(prefix: &str, out: &mut Vec<String>) {
    for c in ["margin_R22", "margin_sharp", "margin_R11", "margin_full_min", "margin_full_max", "margin_swapped_sharp"] {
        out.push(format!("{prefix}{c}"));
    }
}

fn margin_values(m: &WeightMargins, out: &mut Vec<String>) {
    let opt = |v: Option<f64>| num(v.map_or(f64::NAN, |x| -x));
    out.push(num(m.min_22));
    out.push(opt(m.sharp_max));
    out.push(num(m.min_11));
    out.push(num(m.min_full));
    out.push(num(m.max_full));
    out.push(opt(m.swapped_sharp_max));
}

/// Per-time weight margins: `margin_R22` is `λmin(ℝ22)`, `margin_sharp` is
/// `-λmax(ℝ♯)`, `margin_full_min`/`max` are the extreme eigenvalues of `ℝ`;
/// `hat_` columns repeat them for `ℝ̂`.
pub fn sign_report_csv(report: &SignReport) -> String {
    let mut header = vec!["t".to_string()];
    margin_columns("", &mut header);
    margin_columns("hat_", &mut header);
    let mut lines = vec![header.join(",")];
    for s in &report.samples {
        let mut row = vec![num(s.t)];
        margin_values(&s.base, &mut row);
        margin_values(&s.hat, &mut row);
        lines.push(row.join(","));
    }
    lines.join("\n") + "\n"
}

/// `t, F…, Fhat…, K…, W…` (reaction columns only when available).
pub fn gains_csv(g: &GainSchedule) -> String {
    let (n, m1, m2) = (g.n, g.m1, g.m2);
    let m = m1 + m2;
    let mut header = vec!["t".to_string()];
    matrix_header("F", m, n, &mut header);
    matrix_header("Fhat", m, n, &mut header);
    if g.response.is_some() {
        matrix_header("K", m2, n, &mut header);
        matrix_header("W", m2, m1, &mut header);
        matrix_header("Khat", m2, n, &mut header);
        matrix_header("What", m2, m1, &mut header);
    }
    let mut lines = vec![header.join(",")];
    for (i, t) in g.times.iter().enumerate() {
        let mut row = vec![num(*t)];
        push_row_major(&g.f[i], &mut row);
        push_row_major(&g.fhat[i], &mut row);
        if let Some(r) = &g.response {
            push_row_major(&r.k[i], &mut row);
            push_row_major(&r.w[i], &mut row);
            push_row_major(&r.khat[i], &mut row);
            push_row_major(&r.what[i], &mut row);
        }
        lines.push(row.join(","));
    }
    lines.join("\n") + "\n"
}

/// Block shapes of [`gains_csv`].
pub fn gains_sidecar(g: &GainSchedule) -> Value {
    let (n, m1, m2) = (g.n, g.m1, g.m2);
    let mut blocks = vec![json!({"name": "F", "rows": m1 + m2, "cols": n}), json!({"name": "Fhat", "rows": m1 + m2, "cols": n})];
    if g.response.is_some() {
        blocks.push(json!({"name": "K", "rows": m2, "cols": n}));
        blocks.push(json!({"name": "W", "rows": m2, "cols": m1}));
        blocks.push(json!({"name": "Khat", "rows": m2, "cols": n}));
        blocks.push(json!({"name": "What", "rows": m2, "cols": m1}));
    }
    json!({
        "blocks": blocks,
        "n_times": g.times.len(),
        "reaction_unavailable": g.response_error,
    })
}

/// Status of one trajectory: `GLOBAL` or `SINGULAR` with `t_star` and the cause.
pub fn trajectory_status(tr: &RiccatiTrajectory) -> Value {
    match &tr.termination {
        Termination::Global => json!({"status": "GLOBAL", "t_min": tr.t_min(), "interval": [tr.t_min(), tr.horizon()]}),
        Termination::Singular { t_star, reason } => json!({
            "status": "SINGULAR",
            "t_star": t_star,
            "t_min": tr.t_min(),
            "interval": [tr.t_min(), tr.horizon()],
            "reason": reason,
        }),
    }
}

/// Regime verdicts, maximal intervals and terminal statuses.
pub fn solve_summary(sol: &CoupledSolution) -> Value {
    let regimes: serde_json::Map<String, Value> = sol
        .report
        .summaries()
        .into_iter()
        .map(|s| {
            (
                s.regime.label().to_string(),
                json!({"holds": s.holds, "base_margin": finite_or_null(s.base_margin), "hat_margin": finite_or_null(s.hat_margin)}),
            )
        })
        .collect();
    json!({
        "x": trajectory_status(&sol.x),
        "xhat": trajectory_status(&sol.xhat),
        "global": sol.is_global(),
        "regimes": regimes,
        "rejected_sample": sol.report.rejected,
    })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn condition_json(r: &ConditionReport) -> Value {
    let s = ConditionSummary::from(r);
    json!({
        "condition": s.condition,
        "holds": s.holds,
        "margin": finite_or_null(s.margin),
        "hat_margin": finite_or_null(s.hat_margin),
        "failure": s.failure,
        "y": trajectory_status(&r.witness.x),
        "yhat": trajectory_status(&r.witness.xhat),
    })
}

pub fn comparison_json(c: &ComparisonReport) -> Value {
    let names = ["y_minus_x", "x_minus_upsilon", "yhat_minus_xhat", "xhat_minus_upsilonhat"];
    let entries: serde_json::Map<String, Value> = names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.to_string(), json!({"min_eigenvalue": finite_or_null(c.worst[k]), "holds": c.holds[k]})))
        .collect();
    json!({
        "orderings": entries,
        "all_hold": c.all_hold(),
        "restricted_to": c.restricted_to,
        "n_times": c.times.len(),
    })
}

/// `t, y_minus_x, x_minus_upsilon, yhat_minus_xhat, xhat_minus_upsilonhat`.
pub fn comparison_csv(c: &ComparisonReport) -> String {
    let mut lines = vec!["t,y_minus_x,x_minus_upsilon,yhat_minus_xhat,xhat_minus_upsilonhat".to_string()];
    for i in 0..c.times.len() {
        lines.push(
            [c.times[i], c.y_minus_x[i], c.x_minus_upsilon[i], c.yhat_minus_xhat[i], c.xhat_minus_upsilonhat[i]]
                .iter()
                .map(|v| num(*v))
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::worked_example;
    use crate::riccati::solve_coupled;

    #[test]
    fn trajectory_csv_round_trips_to_full_precision() {
        let sol = solve_coupled(&worked_example(), 0.25).unwrap();
        let csv = trajectory_csv("X", &sol.x);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,X[0][0]"));
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert_eq!(first[1], sol.x.at_index(0)[(0, 0)]);
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn summary_reports_statuses() {
        let sol = solve_coupled(&worked_example(), 0.01).unwrap();
        let s = solve_summary(&sol);
        assert_eq!(s["x"]["status"], "GLOBAL");
        assert_eq!(s["regimes"]["block_sign"]["holds"], true);
        assert_eq!(s["regimes"]["stackelberg"]["holds"], false);
    }
}
