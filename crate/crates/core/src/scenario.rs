//! Runs the experiment a scenario names and writes its result files.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Experiment, ScenarioConfig};
use crate::empirics::quality_experiment;
use crate::error::{Error, Result};
use crate::fairsolve::{one_shot, uniform_decision_table, DecisionPair, FairnessCriterion, GreedyDecider};
use crate::horizon::{simulate, suboptimality_witness, sweep_final_proportion, tradeoff_curve, visited_decisions};
use crate::output::{emit_json, emit_sweep, emit_tradeoff, emit_trajectory, fmt_float};

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// One line suitable for a terminal.
    pub summary: String,
    pub files: Vec<PathBuf>,
    /// Non-fatal problems, such as failed sweep cells.
    pub warnings: Vec<String>,
}

/// Compact number for summaries: at most two decimals, no trailing zeros.
pub fn fmt_short(x: f64) -> String {
    let s = format!("{:.2}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn fmt_pair(theta_a: f64, theta_b: f64) -> String {
    format!("({},{})", fmt_short(theta_a), fmt_short(theta_b))
}

fn file_stem(cfg: &ScenarioConfig, criterion: Option<FairnessCriterion>, suffix: &str) -> String {
    match criterion {
        Some(c) => format!("{}_{}_{suffix}", cfg.name, c.name().to_lowercase()),
        None => format!("{}_{suffix}", cfg.name),
    }
}

/// Decision for the first listed criterion at population ratio `N_a / N_b`.
pub fn oneshot_at_ratio(cfg: &ScenarioConfig, ratio: f64) -> Result<DecisionPair> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Domain(format!("ratio must be positive, got {ratio}")));
    }
    let alpha_a = ratio / (1.0 + ratio);
    GreedyDecider::new(cfg.criteria[0], &cfg.group_a, &cfg.group_b)?.decide(alpha_a, 1.0 - alpha_a)
}

#[derive(Serialize)]
struct VisitedEntry {
    criterion: FairnessCriterion,
    visited: Vec<(f64, f64)>,
    table_pairs: Vec<(f64, f64)>,
    thresholds: Vec<f64>,
}

#[derive(Serialize)]
struct WitnessEntry {
    criterion: FairnessCriterion,
    found: bool,
    greedy_average: Option<f64>,
    constant_average: Option<f64>,
    theta_a: Option<f64>,
    theta_b: Option<f64>,
}

/// Executes the scenario's experiment, writing files into `out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let (ga, gb) = (&cfg.group_a, &cfg.group_b);
    let horizon = cfg.conv.max_steps;
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut parts = Vec::new();

    match &cfg.experiment {
        Experiment::Simulate => {
            for &c in &cfg.criteria {
                let init = cfg.initial_state(&cfg.model)?;
                let traj = simulate(ga, gb, c, &cfg.model, init, horizon, &cfg.conv)?;
                let path = out_dir.join(file_stem(cfg, Some(c), "trajectory.csv"));
                emit_trajectory(&traj, &path)?;
                files.push(path);
                let last = traj.last();
                parts.push(format!(
                    "{c} final alpha_a={} after {} steps ({:?})",
                    last.map_or("n/a".into(), |r| fmt_float(r.alpha_a)),
                    traj.records.len(),
                    traj.stop
                ));
            }
        }
        Experiment::Sweep { grid } => {
            for &c in &cfg.criteria {
                let result = sweep_final_proportion(ga, gb, c, &cfg.model, grid, horizon, &cfg.conv)?;
                let path = out_dir.join(file_stem(cfg, Some(c), "sweep.csv"));
                emit_sweep(&result, &path)?;
                files.push(path);
                let mut failed = 0;
                let mut converged = 0;
                for cell in &result.cells {
                    match &cell.outcome {
                        Ok(o) => converged += usize::from(o.converged),
                        Err(e) => {
                            failed += 1;
                            warnings.push(format!("{c} cell ({}, {}): {e}", cell.beta_a, cell.beta_b));
                        }
                    }
                }
                parts.push(format!("{c} {} cells, {converged} converged, {failed} failed", result.cells.len()));
            }
        }
        Experiment::Visited => {
            let init = cfg.initial_state(&cfg.model)?;
            let mut entries = Vec::new();
            for &c in &cfg.criteria {
                let table = uniform_decision_table(c, ga, gb)?;
                let v = visited_decisions(&table, ga, gb, &cfg.model, &init)?;
                let list: Vec<String> = v.pairs().iter().map(|&(a, b)| fmt_pair(a, b)).collect();
                parts.push(format!("{c} [{}]", list.join(",")));
                entries.push(VisitedEntry {
                    criterion: c,
                    visited: v.pairs(),
                    table_pairs: table.pairs.clone(),
                    thresholds: table.thresholds.clone(),
                });
            }
            let path = out_dir.join(file_stem(cfg, None, "visited.json"));
            emit_json(&entries, &path)?;
            files.push(path);
        }
        Experiment::OneShot { ratio } => {
            let alpha_a = ratio / (1.0 + ratio);
            let pairs = cfg
                .criteria
                .iter()
                .map(|&c| one_shot_any(c, cfg, alpha_a))
                .collect::<Result<Vec<_>>>()?;
            for p in &pairs {
                parts.push(format!("{} {}", p.criterion, fmt_pair(p.theta_a, p.theta_b)));
            }
            let path = out_dir.join(file_stem(cfg, None, "oneshot.json"));
            emit_json(&pairs, &path)?;
            files.push(path);
        }
        Experiment::Tradeoff => {
            let points = tradeoff_curve(ga, gb, &cfg.model, horizon, &cfg.conv)?;
            for p in &points {
                parts.push(format!(
                    "{} loss={} alpha_a={}",
                    p.criterion,
                    fmt_float(p.avg_total_loss),
                    fmt_float(p.final_alpha_a)
                ));
            }
            let path = out_dir.join(file_stem(cfg, None, "tradeoff.csv"));
            emit_tradeoff(&points, &path)?;
            files.push(path);
        }
        Experiment::Quality { burn_in, seed } => {
            for &c in &cfg.criteria {
                let init = cfg.initial_state(&cfg.model)?;
                let q = quality_experiment(ga, gb, c, &cfg.model, init, horizon, *seed)?;
                for (traj, suffix) in [(&q.bayes, "bayes.csv"), (&q.learned, "learned.csv")] {
                    let path = out_dir.join(file_stem(cfg, Some(c), suffix));
                    emit_trajectory(traj, &path)?;
                    files.push(path);
                }
                let gaps = q.share_gaps(*burn_in);
                let above = gaps.iter().filter(|g| g.1 > 0.0).count();
                let worst = gaps.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
                parts.push(format!(
                    "{c} group {} share: learned above population-optimal at {above}/{} steps (max gap {})",
                    q.disadvantaged_group(),
                    gaps.len(),
                    fmt_float(if gaps.is_empty() { 0.0 } else { worst })
                ));
            }
        }
        Experiment::Witness { grid_points, margin } => {
            let mut entries = Vec::new();
            for &c in &cfg.criteria {
                let w = suboptimality_witness(ga, gb, c, &cfg.model, horizon, &cfg.conv, *grid_points, *margin)?;
                parts.push(match &w {
                    Some(w) => format!(
                        "{c} constant {} averages {} against greedy {}",
                        fmt_pair(w.pair.theta_a, w.pair.theta_b),
                        fmt_float(w.constant_average),
                        fmt_float(w.greedy_average)
                    ),
                    None => format!("{c} no constant pair beats greedy"),
                });
                entries.push(WitnessEntry {
                    criterion: c,
                    found: w.is_some(),
                    greedy_average: w.map(|w| w.greedy_average),
                    constant_average: w.map(|w| w.constant_average),
                    theta_a: w.map(|w| w.pair.theta_a),
                    theta_b: w.map(|w| w.pair.theta_b),
                });
            }
            let path = out_dir.join(file_stem(cfg, None, "witness.json"));
            emit_json(&entries, &path)?;
            files.push(path);
        }
    }
    Ok(RunReport {
        summary: format!("{} {}: {}", cfg.name, cfg.experiment.name(), parts.join("; ")),
        files,
        warnings,
    })
}

fn one_shot_any(c: FairnessCriterion, cfg: &ScenarioConfig, alpha_a: f64) -> Result<DecisionPair> {
    if c.has_constraint_map() {
        one_shot(c, &cfg.group_a, &cfg.group_b, alpha_a, 1.0 - alpha_a)
    } else {
        GreedyDecider::new(c, &cfg.group_a, &cfg.group_b)?.decide(alpha_a, 1.0 - alpha_a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_numbers() {
        assert_eq!(fmt_short(17.0), "17");
        assert_eq!(fmt_short(-1.0227), "-1.02");
        assert_eq!(fmt_short(40.8), "40.8");
        assert_eq!(fmt_short(-0.001), "0");
        assert_eq!(fmt_pair(10.909, 17.0), "(10.91,17)");
    }
}
