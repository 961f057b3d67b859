//! One-shot threshold selection under a fairness criterion.
//!
//! For the rate-matching criteria (Simple, EqOpt, StatPar) the constraint
//! pins group a's threshold as an increasing function of group b's, so the
//! weighted loss becomes a one-dimensional function of `theta_b`. Its minimum
//! always lies between the two groups' unconstrained minimizers, which gives a
//! bounded search box that does not depend on the group weights.

mod eqlos;
mod minmax;
mod stationarity;
mod uniform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect_first_true, linspace};
use crate::popmodel::{check_weights, GroupSpec};

pub use eqlos::{eqlos_solution, EqLosSolution};
pub use minmax::minmax_solution;
pub use stationarity::stationarity_residual;
pub use uniform::{lemma_constants, uniform_decision_table, ClosedForm, UniformDecisionTable};

const SCAN_POINTS: usize = 2001;
const MAP_TOL: f64 = 1e-13;
const REFINE_ITERS: usize = 200;
/// Objective values closer than this are treated as equal.
pub(crate) const TIE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FairnessCriterion {
    #[serde(alias = "simple")]
    Simple,
    #[serde(alias = "eqopt", alias = "eq_opt")]
    EqOpt,
    #[serde(alias = "statpar", alias = "stat_par")]
    StatPar,
    #[serde(alias = "eqlos", alias = "eq_los")]
    EqLos,
    #[serde(alias = "minmax", alias = "min_max")]
    MinMax,
}

impl FairnessCriterion {
    pub const ALL: [FairnessCriterion; 5] = [
        FairnessCriterion::Simple,
        FairnessCriterion::EqOpt,
        FairnessCriterion::StatPar,
        FairnessCriterion::EqLos,
        FairnessCriterion::MinMax,
    ];

    /// Whether the constraint ties the thresholds through a rate-matching map.
    pub fn has_constraint_map(self) -> bool {
        matches!(self, Self::Simple | Self::EqOpt | Self::StatPar)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Simple => "Simple",
            Self::EqOpt => "EqOpt",
            Self::StatPar => "StatPar",
            Self::EqLos => "EqLos",
            Self::MinMax => "MinMax",
        }
    }
}

impl fmt::Display for FairnessCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FairnessCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect();
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(&key))
            .ok_or_else(|| Error::Domain(format!("unknown fairness criterion '{s}'")))
    }
}

/// A pair of group thresholds chosen under a criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPair {
    pub theta_a: f64,
    pub theta_b: f64,
    pub criterion: FairnessCriterion,
    /// Constraint violation at the pair (`|L_a - L_b|` for EqLos, 0 for MinMax).
    pub residual: f64,
}

/// Threshold of group a matching `theta_b` under the criterion's constraint.
///
/// Simple is the identity, EqOpt matches the label-0 acceptance rate and
/// StatPar the overall acceptance rate. Rates outside a group's range are
/// matched by the nearest support end.
pub fn constraint_map(criterion: FairnessCriterion, ga: &GroupSpec, gb: &GroupSpec, theta_b: f64) -> Result<f64> {
    match criterion {
        FairnessCriterion::Simple => Ok(theta_b),
        FairnessCriterion::EqOpt => ga.f0.quantile(gb.f0.cdf(theta_b)),
        FairnessCriterion::StatPar => Ok(match_acceptance(ga, gb.acceptance_rate(theta_b))),
        other => Err(Error::Domain(format!("{other} has no constraint map"))),
    }
}

/// Threshold of group b matching `theta_a`; the inverse of [`constraint_map`].
pub fn inverse_constraint_map(
    criterion: FairnessCriterion,
    ga: &GroupSpec,
    gb: &GroupSpec,
    theta_a: f64,
) -> Result<f64> {
    constraint_map(criterion, gb, ga, theta_a)
}

fn match_acceptance(g: &GroupSpec, target: f64) -> f64 {
    let (lo, hi) = g.support();
    bisect_first_true(lo, hi, MAP_TOL, |x| g.acceptance_rate(x) <= target)
}

/// `|constraint|` at the pair.
pub fn constraint_residual(
    criterion: FairnessCriterion,
    ga: &GroupSpec,
    gb: &GroupSpec,
    theta_a: f64,
    theta_b: f64,
) -> f64 {
    match criterion {
        FairnessCriterion::Simple => (theta_a - theta_b).abs(),
        FairnessCriterion::EqOpt => (ga.false_positive_rate(theta_a) - gb.false_positive_rate(theta_b)).abs(),
        FairnessCriterion::StatPar => (ga.acceptance_rate(theta_a) - gb.acceptance_rate(theta_b)).abs(),
        FairnessCriterion::EqLos => (ga.expected_loss(theta_a) - gb.expected_loss(theta_b)).abs(),
        FairnessCriterion::MinMax => (theta_a - theta_b).abs(),
    }
}

/// Numerator and denominator of the slope of the constraint map at a matched pair.
pub(crate) fn map_slope_parts(
    criterion: FairnessCriterion,
    ga: &GroupSpec,
    gb: &GroupSpec,
    theta_a: f64,
    theta_b: f64,
) -> (f64, f64) {
    match criterion {
        FairnessCriterion::EqOpt => (gb.f0.pdf(theta_b), ga.f0.pdf(theta_a)),
        FairnessCriterion::StatPar => (gb.mixture_pdf(theta_b), ga.mixture_pdf(theta_a)),
        _ => (1.0, 1.0),
    }
}

/// Rectangle that contains the constrained optimum for every group weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolutionBox {
    pub theta_a: (f64, f64),
    pub theta_b: (f64, f64),
}

impl SolutionBox {
    pub fn contains(&self, theta_a: f64, theta_b: f64, slack: f64) -> bool {
        theta_a >= self.theta_a.0 - slack
            && theta_a <= self.theta_a.1 + slack
            && theta_b >= self.theta_b.0 - slack
            && theta_b <= self.theta_b.1 + slack
    }
}

/// Box spanned by group b's minimizer and the preimage of group a's minimizer.
///
/// Either orientation is allowed; taking the ordered bounds has the same
/// effect as relabelling the groups.
pub fn solution_box(criterion: FairnessCriterion, ga: &GroupSpec, gb: &GroupSpec) -> Result<SolutionBox> {
    let delta_a = ga.unconstrained_minimizer().delta;
    let delta_b = gb.unconstrained_minimizer().delta;
    let a_at_delta_b = constraint_map(criterion, ga, gb, delta_b)?;
    let b_at_delta_a = inverse_constraint_map(criterion, ga, gb, delta_a)?;
    Ok(SolutionBox {
        theta_a: (a_at_delta_b.min(delta_a), a_at_delta_b.max(delta_a)),
        theta_b: (delta_b.min(b_at_delta_a), delta_b.max(b_at_delta_a)),
    })
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub theta_a: f64,
    pub theta_b: f64,
    pub loss_a: f64,
    pub loss_b: f64,
}

impl Candidate {
    fn objective(&self, alpha_a: f64, alpha_b: f64) -> f64 {
        alpha_a * self.loss_a + alpha_b * self.loss_b
    }
}

/// Points of the constraint curve where the objective can have a kink: the
/// support ends of either group, plus the ends of the box.
pub(crate) fn kink_candidates(
    criterion: FairnessCriterion,
    ga: &GroupSpec,
    gb: &GroupSpec,
    bx: &SolutionBox,
) -> Result<Vec<f64>> {
    let (lo, hi) = bx.theta_b;
    let mut kinks = vec![lo, hi];
    kinks.extend(gb.breakpoints());
    for x in ga.breakpoints() {
        kinks.push(inverse_constraint_map(criterion, ga, gb, x)?);
    }
    kinks.retain(|x| *x >= lo && *x <= hi);
    kinks.sort_by(f64::total_cmp);
    kinks.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * x.abs().max(1.0));
    Ok(kinks)
}

/// Reusable one-shot solver for a rate-matching criterion.
///
/// The constraint curve is tabulated once over the solution box; each call to
/// [`solve`](Self::solve) only reweights the cached losses, then refines the
/// best grid cell by bisection on the sign of the objective's derivative and
/// compares against the curve's kinks.
#[derive(Debug, Clone)]
pub struct OneShotSolver {
    criterion: FairnessCriterion,
    ga: GroupSpec,
    gb: GroupSpec,
    bx: SolutionBox,
    grid: Vec<Candidate>,
    kinks: Vec<Candidate>,
}

impl OneShotSolver {
    pub fn new(criterion: FairnessCriterion, ga: &GroupSpec, gb: &GroupSpec) -> Result<Self> {
        if !criterion.has_constraint_map() {
            return Err(Error::Domain(format!("{criterion} is not solved along a constraint curve")));
        }
        let bx = solution_box(criterion, ga, gb)?;
        let mut solver = Self {
            criterion,
            ga: *ga,
            gb: *gb,
            bx,
            grid: Vec::new(),
            kinks: Vec::new(),
        };
        let (lo, hi) = bx.theta_b;
        solver.grid = linspace(lo, hi, SCAN_POINTS)
            .into_iter()
            .map(|x| solver.candidate(x))
            .collect::<Result<_>>()?;
        solver.kinks = kink_candidates(criterion, ga, gb, &bx)?
            .into_iter()
            .map(|x| solver.candidate(x))
            .collect::<Result<_>>()?;
        Ok(solver)
    }

    pub fn solution_box(&self) -> SolutionBox {
        self.bx
    }

    fn candidate(&self, theta_b: f64) -> Result<Candidate> {
        let theta_a = constraint_map(self.criterion, &self.ga, &self.gb, theta_b)?;
        Ok(Candidate {
            theta_a,
            theta_b,
            loss_a: self.ga.expected_loss(theta_a),
            loss_b: self.gb.expected_loss(theta_b),
        })
    }

    // Positive when the objective increases with theta_b; scaled by the
    // positive denominator of the map slope so it stays finite.
    fn derivative_sign(&self, alpha_a: f64, alpha_b: f64, theta_b: f64) -> Result<(f64, f64)> {
        let theta_a = constraint_map(self.criterion, &self.ga, &self.gb, theta_b)?;
        let (num, den) = map_slope_parts(self.criterion, &self.ga, &self.gb, theta_a, theta_b);
        let from_a = alpha_a * self.ga.loss_slope(theta_a) * num;
        let from_b = alpha_b * self.gb.loss_slope(theta_b) * den;
        Ok((from_a + from_b, from_a.abs() + from_b.abs()))
    }

    pub fn solve(&self, alpha_a: f64, alpha_b: f64) -> Result<DecisionPair> {
        check_weights(alpha_a, alpha_b)?;
        let values: Vec<f64> = self.grid.iter().map(|c| c.objective(alpha_a, alpha_b)).collect();
        let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
        let best = values
            .iter()
            .rposition(|v| *v <= min_value + TIE)
            .expect("grid is nonempty");

        let mut lo = self.grid[best.saturating_sub(1)].theta_b;
        let mut hi = self.grid[(best + 1).min(self.grid.len() - 1)].theta_b;
        for _ in 0..REFINE_ITERS {
            if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (d, scale) = self.derivative_sign(alpha_a, alpha_b, mid)?;
            if d <= 1e-12 * scale {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        let mut pick = self.grid[best];
        let mut pick_value = values[best];
        let refined = self.candidate(lo)?;
        for c in std::iter::once(refined).chain(self.kinks.iter().copied()) {
            let v = c.objective(alpha_a, alpha_b);
            if v < pick_value - TIE || (v <= pick_value + TIE && c.theta_b > pick.theta_b) {
                pick = c;
                pick_value = pick_value.min(v);
            }
        }
        Ok(DecisionPair {
            theta_a: pick.theta_a,
            theta_b: pick.theta_b,
            criterion: self.criterion,
            residual: constraint_residual(self.criterion, &self.ga, &self.gb, pick.theta_a, pick.theta_b),
        })
    }
}

/// Per-step decision maker for any criterion.
///
/// EqLos and MinMax decisions do not depend on the group weights, so they are
/// computed once.
#[derive(Debug, Clone)]
pub enum GreedyDecider {
    Constrained(OneShotSolver),
    Fixed(DecisionPair),
}

impl GreedyDecider {
    pub fn new(criterion: FairnessCriterion, ga: &GroupSpec, gb: &GroupSpec) -> Result<Self> {
        Ok(match criterion {
            FairnessCriterion::EqLos => Self::Fixed(eqlos_solution(ga, gb).pair),
            FairnessCriterion::MinMax => Self::Fixed(minmax_solution(ga, gb)),
            c => Self::Constrained(OneShotSolver::new(c, ga, gb)?),
        })
    }

    pub fn decide(&self, alpha_a: f64, alpha_b: f64) -> Result<DecisionPair> {
        match self {
            Self::Constrained(solver) => solver.solve(alpha_a, alpha_b),
            Self::Fixed(pair) => {
                check_weights(alpha_a, alpha_b)?;
                Ok(*pair)
            }
        }
    }
}

/// Minimizes the weighted loss subject to the criterion's constraint.
pub fn one_shot(
    criterion: FairnessCriterion,
    ga: &GroupSpec,
    gb: &GroupSpec,
    alpha_a: f64,
    alpha_b: f64,
) -> Result<DecisionPair> {
    check_weights(alpha_a, alpha_b)?;
    GreedyDecider::new(criterion, ga, gb)?.decide(alpha_a, alpha_b)
}
