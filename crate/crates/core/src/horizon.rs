//! Multi-step simulation under greedy per-step decisions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsKind, DynamicsModel};
use crate::error::{Error, Result};
use crate::fairsolve::{
    constraint_map, eqlos_solution, DecisionPair, FairnessCriterion, GreedyDecider, UniformDecisionTable,
};
use crate::numeric::linspace;
use crate::popmodel::{GroupSpec, PopulationState};

/// Fraction of the run, counted from the end, averaged for the long-run loss.
const TAIL_FRACTION: f64 = 0.2;
const COURSE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub eps: f64,
    pub window: usize,
    pub max_steps: usize,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            window: 10,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Decisions and counts stopped moving.
    Converged,
    /// The step limit was reached first.
    Horizon,
    /// A group ran out of users to learn from.
    Extinct(char),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub theta_a: f64,
    pub theta_b: f64,
    pub loss_a: f64,
    pub loss_b: f64,
    pub alpha_a: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub step_total_loss: f64,
    /// Mean of `step_total_loss` over steps `1..=t`.
    pub avg_total_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub initial: PopulationState,
    pub records: Vec<StepRecord>,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    pub fn final_alpha_a(&self) -> Option<f64> {
        self.last().map(|r| r.alpha_a)
    }

    /// Mean step loss over the last fifth of the run.
    pub fn long_run_average(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let n = self.records.len();
        let tail = ((n as f64 * TAIL_FRACTION).ceil() as usize).clamp(1, n);
        Some(self.records[n - tail..].iter().map(|r| r.step_total_loss).sum::<f64>() / tail as f64)
    }
}

/// Group specs the decision maker sees at the current state. Under subgroup
/// dynamics the label mix drifts with the per-label counts.
fn current_specs(model: &DynamicsModel, state: &PopulationState, ga: &GroupSpec, gb: &GroupSpec) -> Result<(GroupSpec, GroupSpec)> {
    match (model.kind, state.subgroups) {
        (DynamicsKind::Subgroup, Some(s)) => {
            let remix = |g: &GroupSpec, n0: f64, n1: f64| {
                if n0 + n1 > 0.0 {
                    GroupSpec::new(n0 / (n0 + n1), n1 / (n0 + n1), g.f0, g.f1)
                } else {
                    Ok(*g)
                }
            };
            Ok((remix(ga, s.a0, s.a1)?, remix(gb, s.b0, s.b1)?))
        }
        _ => Ok((*ga, *gb)),
    }
}

/// Runs the population forward with decisions from `decide`.
///
/// `decide` receives the step index, the state, both group weights and the
/// group specs the decision maker should use. Returning
/// [`Error::EmptyGroup`] ends the run with [`StopReason::Extinct`].
pub fn simulate_with<F>(
    ga: &GroupSpec,
    gb: &GroupSpec,
    model: &DynamicsModel,
    init: PopulationState,
    horizon: usize,
    conv: &ConvergenceSpec,
    mut decide: F,
) -> Result<Trajectory>
where
    F: FnMut(usize, &PopulationState, f64, f64, &GroupSpec, &GroupSpec) -> Result<DecisionPair>,
{
    let mut rng = model.rng();
    let mut state = init;
    let (arrive_a, arrive_b) = model.expected_arrivals();
    let arrival_share = if arrive_a + arrive_b > 0.0 {
        arrive_a / (arrive_a + arrive_b)
    } else {
        0.5
    };
    let stop_early = model.kind != DynamicsKind::RandomArrival;
    let mut records: Vec<StepRecord> = Vec::with_capacity(horizon.min(4096));
    let mut loss_sum = 0.0;
    let mut calm_steps = 0;
    let mut stop = StopReason::Horizon;

    for t in 1..=horizon {
        let alpha_a = state.proportion_a().unwrap_or(arrival_share);
        let alpha_b = 1.0 - alpha_a;
        let (spec_a, spec_b) = current_specs(model, &state, ga, gb).map_err(|e| e.at_step(t))?;
        let pair = match decide(t, &state, alpha_a, alpha_b, &spec_a, &spec_b) {
            Ok(p) => p,
            Err(Error::EmptyGroup(g)) => {
                stop = StopReason::Extinct(g);
                break;
            }
            Err(e) => return Err(e.at_step(t)),
        };
        let loss_a = spec_a.expected_loss(pair.theta_a);
        let loss_b = spec_b.expected_loss(pair.theta_b);
        let step_total_loss = alpha_a * loss_a + alpha_b * loss_b;
        loss_sum += step_total_loss;
        let record = StepRecord {
            t,
            theta_a: pair.theta_a,
            theta_b: pair.theta_b,
            loss_a,
            loss_b,
            alpha_a,
            n_a: state.n_a,
            n_b: state.n_b,
            step_total_loss,
            avg_total_loss: loss_sum / t as f64,
        };
        if let Some(prev) = records.last() {
            let still = |x: f64, y: f64| (x - y).abs() <= conv.eps * x.abs().max(1.0);
            let calm = (record.theta_a - prev.theta_a).abs() < conv.eps
                && (record.theta_b - prev.theta_b).abs() < conv.eps
                && still(record.n_a, prev.n_a)
                && still(record.n_b, prev.n_b);
            calm_steps = if calm { calm_steps + 1 } else { 0 };
        }
        records.push(record);
        if stop_early && calm_steps >= conv.window {
            stop = StopReason::Converged;
            break;
        }
        state = model.step(&state, &pair, &spec_a, &spec_b, &mut rng).map_err(|e| e.at_step(t))?;
    }
    Ok(Trajectory {
        initial: init,
        records,
        stop,
    })
}

/// Greedy run: each step solves the one-shot problem at the current weights.
pub fn simulate(
    ga: &GroupSpec,
    gb: &GroupSpec,
    criterion: FairnessCriterion,
    model: &DynamicsModel,
    init: PopulationState,
    horizon: usize,
    conv: &ConvergenceSpec,
) -> Result<Trajectory> {
    if model.kind == DynamicsKind::Subgroup {
        // The label mix changes every step, so the solver is rebuilt each time.
        return simulate_with(ga, gb, model, init, horizon, conv, |_, _, wa, wb, sa, sb| {
            GreedyDecider::new(criterion, sa, sb)?.decide(wa, wb)
        });
    }
    let decider = GreedyDecider::new(criterion, ga, gb)?;
    simulate_with(ga, gb, model, init, horizon, conv, |_, _, wa, wb, _, _| decider.decide(wa, wb))
}

/// Run with the same decision at every step.
pub fn simulate_constant(
    ga: &GroupSpec,
    gb: &GroupSpec,
    pair: DecisionPair,
    model: &DynamicsModel,
    init: PopulationState,
    horizon: usize,
    conv: &ConvergenceSpec,
) -> Result<Trajectory> {
    simulate_with(ga, gb, model, init, horizon, conv, |_, _, _, _, _, _| Ok(pair))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Visit {
    /// Index of the pair in the decision table.
    pub index: usize,
    pub theta_a: f64,
    pub theta_b: f64,
    /// Step at which the pair was first chosen, when known from a simulation.
    pub first_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitedDecisions {
    pub visits: Vec<Visit>,
    pub converged_pair: (f64, f64),
}

impl VisitedDecisions {
    pub fn indices(&self) -> Vec<usize> {
        self.visits.iter().map(|v| v.index).collect()
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.visits.iter().map(|v| (v.theta_a, v.theta_b)).collect()
    }

    /// No pair repeats and the indices move by one in a single direction.
    pub fn is_consecutive_run(&self) -> bool {
        let idx = self.indices();
        let up = idx.windows(2).all(|w| w[1] == w[0] + 1);
        let down = idx.windows(2).all(|w| w[0] == w[1] + 1);
        up || down
    }
}

/// Population ratio a constant table pair drives the system toward.
fn drift_ratio(table: &UniformDecisionTable, m: usize, ga: &GroupSpec, gb: &GroupSpec, model: &DynamicsModel) -> f64 {
    let (ta, tb) = table.pairs[m];
    let (beta_a, beta_b) = model.expected_arrivals();
    let leave_a = 1.0 - model.retention.eval(ga.expected_loss(ta));
    let leave_b = 1.0 - model.retention.eval(gb.expected_loss(tb));
    beta_a * leave_b / (beta_b * leave_a)
}

/// Pairs a greedy decision maker walks through on an all-uniform scenario,
/// found by stepping between neighbouring cells of the table until the
/// current pair's drift ratio falls inside its own cell.
pub fn visited_decisions(
    table: &UniformDecisionTable,
    ga: &GroupSpec,
    gb: &GroupSpec,
    model: &DynamicsModel,
    init: &PopulationState,
) -> Result<VisitedDecisions> {
    table.validate()?;
    if init.n_b <= 0.0 {
        return Err(Error::Domain("initial group b count must be positive".into()));
    }
    let mut k = table.select(init.n_a / init.n_b);
    let mut visits: Vec<Visit> = Vec::new();
    let last = table.len() - 1;
    loop {
        if visits.iter().any(|v| v.index == k) {
            return Err(Error::Structure(format!("cell {k} would be visited twice")));
        }
        let (theta_a, theta_b) = table.pairs[k];
        visits.push(Visit {
            index: k,
            theta_a,
            theta_b,
            first_step: None,
        });
        let drift = drift_ratio(table, k, ga, gb, model);
        let lower = if k == 0 { 0.0 } else { table.thresholds[k - 1] };
        let upper = if k == last { f64::INFINITY } else { table.thresholds[k] };
        if drift < lower {
            k -= 1;
        } else if drift > upper {
            k += 1;
        } else {
            break;
        }
    }
    let end = visits.last().expect("at least one visit");
    Ok(VisitedDecisions {
        converged_pair: (end.theta_a, end.theta_b),
        visits,
    })
}

/// Table pairs in the order a simulated run first chose them.
pub fn visited_from_trajectory(table: &UniformDecisionTable, traj: &Trajectory, tol: f64) -> Result<VisitedDecisions> {
    let mut visits: Vec<Visit> = Vec::new();
    for r in &traj.records {
        let index = table.position(r.theta_a, r.theta_b, tol).ok_or_else(|| {
            Error::Structure(format!("step {} chose ({}, {}), which is not a table pair", r.t, r.theta_a, r.theta_b))
        })?;
        if visits.last().map(|v| v.index) != Some(index) {
            let (theta_a, theta_b) = table.pairs[index];
            visits.push(Visit {
                index,
                theta_a,
                theta_b,
                first_step: Some(r.t),
            });
        }
    }
    let end = visits
        .last()
        .ok_or_else(|| Error::Structure("trajectory has no steps".into()))?;
    Ok(VisitedDecisions {
        converged_pair: (end.theta_a, end.theta_b),
        visits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CourseCase {
    /// Group a starts with the larger loss and shrinks.
    GroupALosesMore,
    /// Group b starts with the larger loss and shrinks.
    GroupBLosesMore,
    /// Equal losses keep the decision and the ratio fixed.
    EqualLosses,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CourseViolation {
    pub step: usize,
    pub what: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub case: Option<CourseCase>,
    pub violations: Vec<CourseViolation>,
}

impl MonotonicityReport {
    pub fn first_violation(&self) -> Option<&CourseViolation> {
        self.violations.first()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that a run follows one monotone course: thresholds moving one way,
/// the population ratio moving against the group with the larger loss, and
/// the loss ordering never flipping.
pub fn check_monotone_course(traj: &Trajectory) -> MonotonicityReport {
    let recs = &traj.records;
    let Some(first) = recs.first() else {
        return MonotonicityReport {
            case: None,
            violations: Vec::new(),
        };
    };
    let gap = first.loss_a - first.loss_b;
    let case = if gap > COURSE_TOL {
        CourseCase::GroupALosesMore
    } else if gap < -COURSE_TOL {
        CourseCase::GroupBLosesMore
    } else {
        CourseCase::EqualLosses
    };
    let sign = match case {
        CourseCase::GroupALosesMore => 1.0,
        CourseCase::GroupBLosesMore => -1.0,
        CourseCase::EqualLosses => 0.0,
    };
    let ratio = |r: &StepRecord| r.alpha_a / (1.0 - r.alpha_a);
    // Threshold direction is set by the first visible move.
    let direction = recs
        .windows(2)
        .map(|w| w[1].theta_b - w[0].theta_b)
        .find(|d| d.abs() > COURSE_TOL)
        .map(f64::signum)
        .unwrap_or(0.0);

    let mut violations = Vec::new();
    let mut flag = |step: usize, what: &str| violations.push(CourseViolation { step, what: what.to_string() });
    for w in recs.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        let step = q.t;
        if sign * (q.loss_a - q.loss_b) < -COURSE_TOL || (sign == 0.0 && (q.loss_a - q.loss_b).abs() > COURSE_TOL) {
            flag(step, "loss ordering changed");
        }
        let dr = ratio(q) - ratio(p);
        let scale = ratio(p).abs().max(1.0);
        if sign * dr > COURSE_TOL * scale || (sign == 0.0 && dr.abs() > COURSE_TOL * scale) {
            flag(step, "population ratio moved toward the group with the larger loss");
        }
        if sign * (q.loss_a - p.loss_a) < -COURSE_TOL || sign * (p.loss_b - q.loss_b) < -COURSE_TOL {
            flag(step, "loss gap narrowed");
        }
        for (name, dx) in [("theta_a", q.theta_a - p.theta_a), ("theta_b", q.theta_b - p.theta_b)] {
            let against = if direction == 0.0 { dx.abs() > COURSE_TOL } else { direction * dx < -COURSE_TOL };
            if sign == 0.0 && dx.abs() > COURSE_TOL {
                flag(step, &format!("{name} moved under equal losses"));
            } else if sign != 0.0 && against {
                flag(step, &format!("{name} reversed direction"));
            }
        }
    }
    MonotonicityReport { case: Some(case), violations }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellOutcome {
    pub final_alpha_a: f64,
    /// Share of the smaller group.
    pub min_alpha: f64,
    pub final_theta_a: f64,
    pub final_theta_b: f64,
    pub final_loss_a: f64,
    pub final_loss_b: f64,
    pub converged: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub beta_a: f64,
    pub beta_b: f64,
    pub outcome: std::result::Result<CellOutcome, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub criterion: FairnessCriterion,
    pub cells: Vec<SweepCell>,
}

/// Final group share for every arrival-rate pair, starting each run near empty.
///
/// Cells run on the current rayon pool and come back in grid order; a failing
/// cell records its error and the sweep goes on.
#[allow(clippy::too_many_arguments)]
pub fn sweep_final_proportion(
    ga: &GroupSpec,
    gb: &GroupSpec,
    criterion: FairnessCriterion,
    model_template: &DynamicsModel,
    beta_grid: &[(f64, f64)],
    horizon: usize,
    conv: &ConvergenceSpec,
) -> Result<SweepResult> {
    if beta_grid.is_empty() {
        return Err(Error::Domain("sweep grid is empty".into()));
    }
    let cells = beta_grid
        .par_iter()
        .map(|&(beta_a, beta_b)| {
            let run = || -> Result<CellOutcome> {
                let model = model_template.with_arrivals(beta_a, beta_b)?;
                let init = model.near_empty_state(ga, gb)?;
                let traj = simulate(ga, gb, criterion, &model, init, horizon, conv)?;
                let last = traj.last().ok_or_else(|| Error::Domain("empty horizon".into()))?;
                Ok(CellOutcome {
                    final_alpha_a: last.alpha_a,
                    min_alpha: last.alpha_a.min(1.0 - last.alpha_a),
                    final_theta_a: last.theta_a,
                    final_theta_b: last.theta_b,
                    final_loss_a: last.loss_a,
                    final_loss_b: last.loss_b,
                    converged: traj.converged(),
                    steps: traj.records.len(),
                })
            };
            SweepCell {
                beta_a,
                beta_b,
                outcome: run().map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(SweepResult { criterion, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub criterion: FairnessCriterion,
    pub avg_total_loss: f64,
    pub final_alpha_a: f64,
}

/// Long-run loss and final group share under Simple, EqLos and MinMax.
pub fn tradeoff_curve(
    ga: &GroupSpec,
    gb: &GroupSpec,
    model: &DynamicsModel,
    horizon: usize,
    conv: &ConvergenceSpec,
) -> Result<Vec<TradeoffPoint>> {
    [FairnessCriterion::Simple, FairnessCriterion::EqLos, FairnessCriterion::MinMax]
        .into_iter()
        .map(|criterion| {
            let init = model.near_empty_state(ga, gb)?;
            let traj = simulate(ga, gb, criterion, model, init, horizon, conv)?;
            Ok(TradeoffPoint {
                criterion,
                avg_total_loss: traj.long_run_average().unwrap_or(f64::NAN),
                final_alpha_a: traj.final_alpha_a().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// A constant decision whose long-run loss beats the greedy sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuboptimalityWitness {
    pub pair: DecisionPair,
    pub constant_average: f64,
    pub greedy_average: f64,
}

/// Searches a grid of constant pairs on the criterion's constraint curve for
/// one with a lower long-run loss than the greedy run.
#[allow(clippy::too_many_arguments)]
pub fn suboptimality_witness(
    ga: &GroupSpec,
    gb: &GroupSpec,
    criterion: FairnessCriterion,
    model: &DynamicsModel,
    horizon: usize,
    conv: &ConvergenceSpec,
    grid_points: usize,
    margin: f64,
) -> Result<Option<SuboptimalityWitness>> {
    let init = model.near_empty_state(ga, gb)?;
    let greedy = simulate(ga, gb, criterion, model, init, horizon, conv)?;
    let greedy_average = greedy.long_run_average().ok_or_else(|| Error::Domain("empty horizon".into()))?;
    let (lo, hi) = gb.support();
    let candidates: Vec<DecisionPair> = linspace(lo, hi, grid_points)
        .into_iter()
        .map(|theta_b| {
            Ok(DecisionPair {
                theta_a: constraint_map(criterion, ga, gb, theta_b)?,
                theta_b,
                criterion,
                residual: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let scored = candidates
        .par_iter()
        .map(|pair| {
            let traj = simulate_constant(ga, gb, *pair, model, init, horizon, conv)?;
            Ok((*pair, traj.long_run_average().unwrap_or(f64::INFINITY)))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = scored
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("grid is nonempty");
    Ok((best.1 < greedy_average - margin).then_some(SuboptimalityWitness {
        pair: best.0,
        constant_average: best.1,
        greedy_average,
    }))
}

/// Long-run loss of constant equal-loss pairs at levels above the greedy target.
pub fn equal_loss_constant_averages(
    ga: &GroupSpec,
    gb: &GroupSpec,
    model: &DynamicsModel,
    levels: &[f64],
    horizon: usize,
    conv: &ConvergenceSpec,
) -> Result<Vec<(f64, f64)>> {
    let target = eqlos_solution(ga, gb).target_loss;
    let root = |g: &GroupSpec, level: f64| {
        let delta = g.unconstrained_minimizer().delta;
        let hi = g.support().1;
        if g.expected_loss(hi) < level {
            return Err(Error::Domain(format!("loss level {level} unreachable to the right of the minimizer")));
        }
        Ok(crate::numeric::bisect_root(delta, hi, 1e-13, |x| g.expected_loss(x) - level))
    };
    levels
        .iter()
        .map(|&level| {
            if level < target {
                return Err(Error::Domain(format!("loss level {level} is below the reachable minimum {target}")));
            }
            let pair = DecisionPair {
                theta_a: root(ga, level)?,
                theta_b: root(gb, level)?,
                criterion: FairnessCriterion::EqLos,
                residual: 0.0,
            };
            let init = model.near_empty_state(ga, gb)?;
            let traj = simulate_constant(ga, gb, pair, model, init, horizon, conv)?;
            Ok((level, traj.long_run_average().unwrap_or(f64::NAN)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SubgroupDistribution as D;
    use crate::dynamics::RetentionFn;
    use crate::fairsolve::uniform_decision_table;
    use FairnessCriterion::*;

    fn uniform() -> (GroupSpec, GroupSpec) {
        (
            GroupSpec::with_negative_share(0.8, D::uniform(-5.0, 20.0).unwrap(), D::uniform(10.0, 35.0).unwrap()).unwrap(),
            GroupSpec::with_negative_share(0.2, D::uniform(3.0, 25.0).unwrap(), D::uniform(17.0, 45.0).unwrap()).unwrap(),
        )
    }

    fn truncated() -> (GroupSpec, GroupSpec) {
        (
            GroupSpec::with_negative_share(
                0.4,
                D::truncated_normal(4.0, 5.0, -8.0, 19.0).unwrap(),
                D::truncated_normal(20.0, 6.0, 5.0, 35.0).unwrap(),
            )
            .unwrap(),
            GroupSpec::with_negative_share(
                0.6,
                D::truncated_normal(8.0, 3.0, -6.0, 25.0).unwrap(),
                D::truncated_normal(27.0, 6.0, 9.0, 43.0).unwrap(),
            )
            .unwrap(),
        )
    }

    fn accuracy(beta_a: f64, beta_b: f64, retention: RetentionFn) -> DynamicsModel {
        DynamicsModel::new(DynamicsKind::Accuracy, retention, beta_a, beta_b).unwrap()
    }

    fn run(ga: &GroupSpec, gb: &GroupSpec, c: FairnessCriterion, m: &DynamicsModel) -> Trajectory {
        let init = m.near_empty_state(ga, gb).unwrap();
        simulate(ga, gb, c, m, init, 100_000, &ConvergenceSpec::default()).unwrap()
    }

    #[test]
    fn records_are_self_consistent() {
        let (ga, gb) = truncated();
        let traj = run(&ga, &gb, StatPar, &accuracy(300.0, 700.0, RetentionFn::OneMinusX));
        assert!(traj.converged());
        let mut sum = 0.0;
        for r in &traj.records {
            assert!((r.alpha_a - r.n_a / (r.n_a + r.n_b)).abs() < 1e-12);
            assert!((r.step_total_loss - (r.alpha_a * r.loss_a + (1.0 - r.alpha_a) * r.loss_b)).abs() < 1e-12);
            sum += r.step_total_loss;
            assert!((r.avg_total_loss - sum / r.t as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_loss_keeps_arrival_share() {
        let (ga, gb) = uniform();
        for (ba, bb) in [(1000.0, 9000.0), (7000.0, 3000.0)] {
            let traj = run(&ga, &gb, EqLos, &accuracy(ba, bb, RetentionFn::OneMinusXSquared));
            assert!((traj.final_alpha_a().unwrap() - ba / (ba + bb)).abs() < 1e-6);
        }
    }

    #[test]
    fn shared_threshold_settles_at_table_pair() {
        let (ga, gb) = uniform();
        let traj = run(&ga, &gb, Simple, &accuracy(7000.0, 3000.0, RetentionFn::OneMinusXSquared));
        let last = traj.last().unwrap();
        assert!((last.theta_a - 20.0).abs() < 1e-9 && (last.theta_b - 20.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_setup_stays_balanced() {
        let (ga, _) = truncated();
        for c in [Simple, EqOpt, StatPar, EqLos, MinMax] {
            let traj = run(&ga, &ga, c, &accuracy(500.0, 500.0, RetentionFn::OneMinusX));
            assert!(traj.records.iter().all(|r| (r.alpha_a - 0.5).abs() < 1e-12), "{c}");
        }
    }

    #[test]
    fn visited_table_examples() {
        let (ga, gb) = uniform();
        let t = uniform_decision_table(StatPar, &ga, &gb).unwrap();
        let m = accuracy(5000.0, 5000.0, RetentionFn::OneMinusXSquared);
        let v = visited_decisions(&t, &ga, &gb, &m, &m.near_empty_state(&ga, &gb).unwrap()).unwrap();
        let want = [(10.0, 26.8), (8.39, 25.0), (-1.02, 17.0)];
        assert_eq!(v.visits.len(), 3);
        for (got, w) in v.pairs().iter().zip(want) {
            assert!((got.0 - w.0).abs() < 0.01 && (got.1 - w.1).abs() < 0.01, "{:?}", v.pairs());
        }
        assert!(v.is_consecutive_run());

        let traj = run(&ga, &gb, StatPar, &m);
        let seen = visited_from_trajectory(&t, &traj, 1e-6).unwrap();
        assert_eq!(seen.indices(), v.indices());

        let t = uniform_decision_table(Simple, &ga, &gb).unwrap();
        let m = accuracy(3000.0, 7000.0, RetentionFn::OneMinusXSquared);
        let v = visited_decisions(&t, &ga, &gb, &m, &m.near_empty_state(&ga, &gb).unwrap()).unwrap();
        assert_eq!(v.pairs(), vec![(17.0, 17.0)]);
    }

    #[test]
    fn monotone_course_cases() {
        let (ga, gb) = truncated();
        let m = accuracy(500.0, 500.0, RetentionFn::OneMinusX);
        for c in [Simple, EqOpt, StatPar] {
            let traj = run(&ga, &gb, c, &m);
            let report = check_monotone_course(&traj);
            assert!(report.is_clean(), "{c}: {:?}", report.first_violation());
            assert_ne!(report.case, Some(CourseCase::EqualLosses));
        }
        let report = check_monotone_course(&run(&ga, &gb, EqLos, &m));
        assert_eq!(report.case, Some(CourseCase::EqualLosses));
        assert!(report.is_clean());

        let mut traj = run(&ga, &gb, Simple, &m);
        let k = 3;
        let dir = (traj.records[k].theta_b - traj.records[k - 1].theta_b).signum();
        traj.records[k].theta_a -= 5.0 * dir;
        traj.records[k].theta_b -= 5.0 * dir;
        let report = check_monotone_course(&traj);
        assert_eq!(report.first_violation().map(|v| v.step), Some(k + 1));
    }

    #[test]
    fn sweep_in_grid_order() {
        let (ga, gb) = uniform();
        let grid = vec![(1000.0, 2000.0), (3000.0, 1000.0), (2000.0, 2000.0)];
        let model = accuracy(1.0, 1.0, RetentionFn::OneMinusXSquared);
        let res = sweep_final_proportion(&ga, &gb, EqLos, &model, &grid, 100_000, &ConvergenceSpec::default()).unwrap();
        for (cell, (ba, bb)) in res.cells.iter().zip(&grid) {
            assert_eq!((cell.beta_a, cell.beta_b), (*ba, *bb));
            let out = cell.outcome.as_ref().unwrap();
            assert!((out.final_alpha_a - ba / (ba + bb)).abs() < 1e-6);
        }
        let (g, _) = truncated();
        let res = sweep_final_proportion(&g, &g, Simple, &model, &[(10.0, 10.0)], 1000, &ConvergenceSpec::default()).unwrap();
        assert!((res.cells[0].outcome.as_ref().unwrap().final_alpha_a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_horizon_is_empty() {
        let (ga, gb) = uniform();
        let m = accuracy(10.0, 10.0, RetentionFn::OneMinusX);
        let traj = simulate(&ga, &gb, Simple, &m, m.near_empty_state(&ga, &gb).unwrap(), 0, &ConvergenceSpec::default()).unwrap();
        assert!(traj.records.is_empty());
        assert_eq!(traj.long_run_average(), None);
    }

    #[test]
    fn subgroup_dynamics_runs() {
        let (ga, gb) = truncated();
        let m = DynamicsModel::new(DynamicsKind::Subgroup, RetentionFn::OneMinusX, 100.0, 100.0).unwrap();
        let init = m.near_empty_state(&ga, &gb).unwrap();
        let traj = simulate(&ga, &gb, EqOpt, &m, init, 300, &ConvergenceSpec::default()).unwrap();
        assert!(!traj.records.is_empty());
        let bad = PopulationState::new(100.0, 100.0).unwrap();
        let err = simulate(&ga, &gb, EqOpt, &m, bad, 10, &ConvergenceSpec::default()).unwrap_err();
        assert!(matches!(err, Error::AtStep { step: 1, .. }), "{err:?}");
    }
}
