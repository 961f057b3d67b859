//! CSV and JSON writers for experiment results.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::horizon::{SweepResult, TradeoffPoint, Trajectory};

pub const TRAJECTORY_COLUMNS: [&str; 10] = [
    "t",
    "theta_a",
    "theta_b",
    "loss_a",
    "loss_b",
    "alpha_a",
    "n_a",
    "n_b",
    "step_total_loss",
    "avg_total_loss",
];

pub const SWEEP_COLUMNS: [&str; 8] = [
    "beta_a",
    "beta_b",
    "final_alpha_a",
    "final_theta_a",
    "final_theta_b",
    "final_loss_a",
    "final_loss_b",
    "converged",
];

pub const TRADEOFF_COLUMNS: [&str; 3] = ["criterion", "avg_total_loss", "final_alpha_a"];

/// Shortest decimal form of `x` rounded to 12 significant digits.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    // Avoid a signed zero in the output.
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    w.write_record(header).map_err(|e| io(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

pub fn emit_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let rows = traj.records.iter().map(|r| {
        let mut row = vec![r.t.to_string()];
        row.extend(
            [r.theta_a, r.theta_b, r.loss_a, r.loss_b, r.alpha_a, r.n_a, r.n_b, r.step_total_loss, r.avg_total_loss]
                .map(fmt_float),
        );
        row
    });
    write_rows(path, &TRAJECTORY_COLUMNS, rows)
}

/// One row per grid cell in grid order. Failed cells carry `NaN` values and
/// `converged = false`.
pub fn emit_sweep(result: &SweepResult, path: &Path) -> Result<()> {
    let rows = result.cells.iter().map(|cell| {
        let mut row = vec![fmt_float(cell.beta_a), fmt_float(cell.beta_b)];
        match &cell.outcome {
            Ok(o) => {
                row.extend(
                    [o.final_alpha_a, o.final_theta_a, o.final_theta_b, o.final_loss_a, o.final_loss_b].map(fmt_float),
                );
                row.push(o.converged.to_string());
            }
            Err(_) => {
                row.extend(std::iter::repeat_n(fmt_float(f64::NAN), 5));
                row.push("false".into());
            }
        }
        row
    });
    write_rows(path, &SWEEP_COLUMNS, rows)
}

pub fn emit_tradeoff(points: &[TradeoffPoint], path: &Path) -> Result<()> {
    let rows = points
        .iter()
        .map(|p| vec![p.criterion.to_string(), fmt_float(p.avg_total_loss), fmt_float(p.final_alpha_a)]);
    write_rows(path, &TRADEOFF_COLUMNS, rows)
}

/// Pretty-printed JSON followed by a newline.
pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    let mut f = File::create(path).map_err(|e| io(path, e))?;
    writeln!(f, "{text}").map_err(|e| io(path, e))
}
