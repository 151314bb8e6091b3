//! Plot-ready report files: RFC-4180 CSV tables plus a JSON summary.
//! Everything is formatted deterministically so identical campaigns produce
//! byte-identical files.

use std::path::Path;

use crate::driver::{CampaignError, CampaignReport, CampaignStatus};

/// Quote a CSV field when it contains a comma, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_line(fields: &[String]) -> String {
    let mut line = fields
        .iter()
        .map(|f| csv_field(f))
        .collect::<Vec<_>>()
        .join(",");
    line.push_str("\r\n");
    line
}

fn fnum(v: f64) -> String {
    format!("{v}")
}

/// Write observations.csv, iterations.csv, ledger.csv, surface_grid.csv
/// (for problems with at most 2 dimensions), and summary.json under
/// `<dir>/report/`.
pub fn write_report(report: &CampaignReport, dir: &Path) -> Result<(), CampaignError> {
    let out = dir.join("report");
    std::fs::create_dir_all(&out)?;

    let dim = report.history.first().map(|o| o.point.dim()).unwrap_or(0);

    // observations.csv
    let mut buf = String::new();
    let mut header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    header.extend(
        [
            "level",
            "value",
            "noise_var",
            "feasible",
            "walltime",
            "task_id",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    buf.push_str(&csv_line(&header));
    for obs in &report.history {
        let mut row: Vec<String> = obs.point.coords.iter().map(|c| fnum(*c)).collect();
        row.push(obs.level.to_string());
        row.push(fnum(obs.value));
        row.push(fnum(obs.noise_var));
        row.push(obs.feasible.to_string());
        row.push(fnum(obs.walltime_actual));
        row.push(obs.task_id.clone());
        buf.push_str(&csv_line(&row));
    }
    std::fs::write(out.join("observations.csv"), &buf)?;

    // iterations.csv
    let mut buf = String::new();
    buf.push_str(&csv_line(
        &[
            "i",
            "t_i",
            "b_i",
            "proposed",
            "selected",
            "benefit",
            "optimal",
            "spent_t_actual",
            "spent_b_actual",
            "best_so_far",
            "mean_grid_variance",
        ]
        .map(String::from),
    ));
    for rec in &report.iterations {
        buf.push_str(&csv_line(&[
            rec.iteration.to_string(),
            fnum(rec.t_i),
            fnum(rec.b_i),
            rec.proposed.to_string(),
            rec.selected.len().to_string(),
            fnum(rec.achieved_benefit),
            rec.optimal.to_string(),
            fnum(rec.spent_t_actual),
            fnum(rec.spent_b_actual),
            rec.best_so_far.map(fnum).unwrap_or_default(),
            fnum(rec.mean_grid_variance),
        ]));
    }
    std::fs::write(out.join("iterations.csv"), &buf)?;

    // ledger.csv
    let mut buf = String::new();
    buf.push_str(&csv_line(
        &[
            "label",
            "planned_t",
            "planned_b",
            "actual_t",
            "actual_b",
            "t_remaining_after",
            "b_remaining_after",
            "terminated_after",
        ]
        .map(String::from),
    ));
    for row in &report.ledger {
        buf.push_str(&csv_line(&[
            row.label.clone(),
            fnum(row.planned_t),
            fnum(row.planned_b),
            fnum(row.actual_t),
            fnum(row.actual_b),
            fnum(row.t_remaining_after),
            fnum(row.b_remaining_after),
            row.terminated_after.to_string(),
        ]));
    }
    std::fs::write(out.join("ledger.csv"), &buf)?;

    // surface_grid.csv (surrogate mean/variance/trust for d <= 2)
    if !report.surface_grid.is_empty() {
        let mut buf = String::new();
        let gdim = report.surface_grid[0].x.len();
        let mut header: Vec<String> = (0..gdim).map(|j| format!("x{j}")).collect();
        header.extend(["mean", "variance", "trust"].map(String::from));
        buf.push_str(&csv_line(&header));
        for row in &report.surface_grid {
            let mut fields: Vec<String> = row.x.iter().map(|c| fnum(*c)).collect();
            fields.push(fnum(row.mean));
            fields.push(fnum(row.variance));
            fields.push(fnum(row.trust));
            buf.push_str(&csv_line(&fields));
        }
        std::fs::write(out.join("surface_grid.csv"), &buf)?;
    }

    // summary.json
    let summary = serde_json::json!({
        "schema_version": 1,
        "problem": report.problem_name,
        "goal": report.goal,
        "status": match &report.status {
            CampaignStatus::Completed => serde_json::json!({"kind": "completed"}),
            CampaignStatus::Failed(reason) =>
                serde_json::json!({"kind": "failed", "reason": reason}),
        },
        "seed": report.seed,
        "direction": report.direction,
        "n_observations": report.history.len(),
        "best": report.best.as_ref().map(|b| serde_json::json!({
            "point": b.point.coords,
            "value": b.value,
            "task_id": b.task_id,
        })),
        "uncertainty_at_best": report.uncertainty_at_best,
        "budgets": {
            "wallclock": report.wallclock_budget,
            "resource": report.resource_budget,
        },
        "ledger": report.ledger,
        "surrogate": report.surrogate,
        "variance_trace": report.variance_trace,
    });
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}
