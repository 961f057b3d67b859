//! Decision tables for scenarios whose four feature densities are uniform.
//!
//! With uniform densities every loss and rate is piecewise linear, so the
//! weighted objective along the constraint curve is piecewise linear in
//! `theta_b` and its minimum always sits at one of finitely many kinks. Each
//! kink contributes a line `ratio * L_a + L_b` in the population ratio, and the
//! lower envelope of those lines is the table.

use serde::Serialize;

use super::{constraint_map, kink_candidates, solution_box, FairnessCriterion};
use crate::error::{Error, Result};
use crate::popmodel::GroupSpec;

const SAME_LINE: f64 = 1e-13;
const RATIO_REL_TOL: f64 = 1e-12;

/// Closed-form table for the sign case the scenario falls in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedForm {
    pub case_label: String,
    pub pairs: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
    /// Built from the enumerated candidate pairs rather than a worked-out case.
    pub extrapolated: bool,
}

/// Optimal pairs by population ratio `alpha_a / alpha_b`.
///
/// Pair `m` is optimal for ratios between `thresholds[m - 1]` and `thresholds[m]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformDecisionTable {
    pub criterion: FairnessCriterion,
    pub pairs: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
    pub closed_form: Option<ClosedForm>,
}

impl UniformDecisionTable {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Checks the shape invariants: one fewer threshold than pairs, all
    /// thresholds positive and strictly increasing.
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() || self.thresholds.len() + 1 != self.pairs.len() {
            return Err(Error::Structure(format!(
                "table needs one fewer threshold than pairs, got {} pairs and {} thresholds",
                self.pairs.len(),
                self.thresholds.len()
            )));
        }
        if self.thresholds.iter().any(|r| !(r.is_finite() && *r > 0.0))
            || self.thresholds.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Structure(format!(
                "thresholds must be positive and strictly increasing, got {:?}",
                self.thresholds
            )));
        }
        Ok(())
    }

    /// Index of the optimal pair at `ratio`. At a threshold both neighbours
    /// are optimal and the one with the larger `theta_b` is returned.
    pub fn select(&self, ratio: f64) -> usize {
        for (m, r) in self.thresholds.iter().enumerate() {
            if (ratio - r).abs() <= RATIO_REL_TOL * r {
                return if self.pairs[m + 1].1 > self.pairs[m].1 { m + 1 } else { m };
            }
            if ratio < *r {
                return m;
            }
        }
        self.pairs.len() - 1
    }

    /// Index of the table pair within `tol` of the given thresholds.
    pub fn position(&self, theta_a: f64, theta_b: f64, tol: f64) -> Option<usize> {
        self.pairs
            .iter()
            .position(|(a, b)| (a - theta_a).abs() <= tol && (b - theta_b).abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy)]
struct Line {
    theta_a: f64,
    theta_b: f64,
    slope: f64,
    intercept: f64,
}

/// Lower envelope of `ratio * slope + intercept` over `ratio > 0`.
fn lower_envelope(mut lines: Vec<Line>) -> (Vec<(f64, f64)>, Vec<f64>) {
    // Merge lines that coincide, keeping the larger theta_b.
    lines.sort_by(|x, y| y.theta_b.total_cmp(&x.theta_b));
    let mut unique: Vec<Line> = Vec::new();
    for l in lines {
        let dup = unique
            .iter()
            .any(|u| (u.slope - l.slope).abs() <= SAME_LINE && (u.intercept - l.intercept).abs() <= SAME_LINE);
        if !dup {
            unique.push(l);
        }
    }

    // Near zero ratio the smallest intercept wins; ties go to the flatter line.
    let mut current = unique[0];
    for l in &unique[1..] {
        let better = l.intercept < current.intercept - SAME_LINE
            || (l.intercept <= current.intercept + SAME_LINE && l.slope < current.slope);
        if better {
            current = *l;
        }
    }

    let mut pairs = vec![(current.theta_a, current.theta_b)];
    let mut thresholds: Vec<f64> = Vec::new();
    loop {
        let mut next: Option<(f64, Line)> = None;
        for l in unique.iter().filter(|l| l.slope < current.slope - SAME_LINE) {
            let cross = (l.intercept - current.intercept) / (current.slope - l.slope);
            let replace = match next {
                None => true,
                Some((best, best_line)) => {
                    cross < best - RATIO_REL_TOL * best.abs()
                        || (cross <= best + RATIO_REL_TOL * best.abs() && l.slope < best_line.slope)
                }
            };
            if replace {
                next = Some((cross, *l));
            }
        }
        match next {
            Some((cross, line)) => {
                let floor = thresholds.last().copied().unwrap_or(0.0);
                thresholds.push(cross.max(floor));
                pairs.push((line.theta_a, line.theta_b));
                current = line;
            }
            None => break,
        }
    }
    (pairs, thresholds)
}

fn line_for(ga: &GroupSpec, gb: &GroupSpec, theta_a: f64, theta_b: f64) -> Line {
    Line {
        theta_a,
        theta_b,
        slope: ga.expected_loss(theta_a),
        intercept: gb.expected_loss(theta_b),
    }
}

/// Decision table for a rate-matching criterion on an all-uniform scenario.
///
/// The table is computed from the kinks of the constraint curve. When the
/// scenario matches one of the enumerated sign cases the closed form is
/// attached as well.
pub fn uniform_decision_table(
    criterion: FairnessCriterion,
    ga: &GroupSpec,
    gb: &GroupSpec,
) -> Result<UniformDecisionTable> {
    if !(ga.is_uniform() && gb.is_uniform()) {
        return Err(Error::Structure("decision tables need all four densities uniform".into()));
    }
    if !criterion.has_constraint_map() {
        return Err(Error::Domain(format!("{criterion} has no decision table")));
    }
    let bx = solution_box(criterion, ga, gb)?;
    let lines = kink_candidates(criterion, ga, gb, &bx)?
        .into_iter()
        .map(|tb| Ok(line_for(ga, gb, constraint_map(criterion, ga, gb, tb)?, tb)))
        .collect::<Result<Vec<_>>>()?;
    let (pairs, thresholds) = lower_envelope(lines);
    let closed_form = match lemma_constants(criterion, ga, gb) {
        Ok(c) => Some(c),
        Err(Error::Case(_)) => None,
        Err(e) => return Err(e),
    };
    let table = UniformDecisionTable {
        criterion,
        pairs,
        thresholds,
        closed_form,
    };
    table.validate()?;
    Ok(table)
}

/// Density heights `g / (hi - lo)` of the four uniform subgroups.
#[derive(Debug, Clone, Copy)]
struct Heights {
    a0: f64,
    a1: f64,
    b0: f64,
    b1: f64,
}

impl Heights {
    fn of(ga: &GroupSpec, gb: &GroupSpec) -> Self {
        let h = |g: f64, d: &crate::dist::SubgroupDistribution| g / (d.hi() - d.lo());
        Self {
            a0: h(ga.g0, &ga.f0),
            a1: h(ga.g1, &ga.f1),
            b0: h(gb.g0, &gb.f0),
            b1: h(gb.g1, &gb.f1),
        }
    }
}

fn sign_case(positive_b: f64, negative_b: f64, positive_a: f64, negative_a: f64) -> Result<(bool, bool)> {
    if positive_b == negative_b || positive_a == negative_a {
        return Err(Error::Case("density heights tie, no strict sign case applies".into()));
    }
    Ok((positive_b > negative_b, positive_a > negative_a))
}

/// Drops leading cells whose upper threshold is not positive, then checks the
/// remaining thresholds are ordered.
fn trim_cells(mut pairs: Vec<(f64, f64)>, mut thresholds: Vec<f64>) -> Result<(Vec<(f64, f64)>, Vec<f64>)> {
    while !thresholds.is_empty() && thresholds[0] <= 0.0 {
        thresholds.remove(0);
        pairs.remove(0);
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Case(format!("closed-form thresholds are not ordered: {thresholds:?}")));
    }
    Ok((pairs, thresholds))
}

/// Closed-form pairs and ratio thresholds from the enumerated sign cases.
pub fn lemma_constants(criterion: FairnessCriterion, ga: &GroupSpec, gb: &GroupSpec) -> Result<ClosedForm> {
    if !(ga.is_uniform() && gb.is_uniform()) {
        return Err(Error::Structure("closed forms need all four densities uniform".into()));
    }
    let s = Heights::of(ga, gb);
    let (a0_lo, a0_hi, a1_lo) = (ga.f0.lo(), ga.f0.hi(), ga.f1.lo());
    let (b0_lo, b0_hi, b1_lo, b1_hi) = (gb.f0.lo(), gb.f0.hi(), gb.f1.lo(), gb.f1.hi());
    let (b_rises, a_rises) = sign_case(s.b1, s.b0, s.a1, s.a0)?;

    match criterion {
        FairnessCriterion::Simple => {
            if !(a1_lo <= b1_lo && b1_lo <= a0_hi && a0_hi <= b0_hi) {
                return Err(Error::Case("support ends are not interleaved as the shared-threshold cases assume".into()));
            }
            let low_a = s.b0 / (s.a1 - s.a0);
            let low_b = (s.b0 - s.b1) / s.a1;
            let cross = (s.b0 - s.b1) / (s.a1 - s.a0);
            let (label, thetas, thresholds) = match (b_rises, a_rises) {
                (false, true) => ("shared (i)", vec![b0_hi, a0_hi, b1_lo, a1_lo], vec![low_b, cross, low_a]),
                (true, true) => ("shared (ii)", vec![b1_lo, a1_lo], vec![low_a]),
                (false, false) => ("shared (iii)", vec![b0_hi, a0_hi], vec![low_b]),
                (true, false) => ("shared (iv)", vec![b1_lo, a0_hi], vec![cross]),
            };
            let pairs = thetas.into_iter().map(|t| (t, t)).collect();
            let (pairs, thresholds) = trim_cells(pairs, thresholds)?;
            Ok(ClosedForm {
                case_label: label.into(),
                pairs,
                thresholds,
                extrapolated: false,
            })
        }
        FairnessCriterion::EqOpt => {
            let (ra0, rb0) = (a0_hi - a0_lo, b0_hi - b0_lo);
            if (b0_hi - b1_lo) / rb0 >= (a0_hi - a1_lo) / ra0 {
                return Err(Error::Case("group b's label-0 overlap share is not the smaller one".into()));
            }
            let theta_a_at_b_overlap = a0_hi - ra0 * (b0_hi - b1_lo) / rb0;
            let theta_b_at_a_overlap = b0_hi - rb0 * (a0_hi - a1_lo) / ra0;
            let first = (rb0 / ra0) * (s.b0 - s.b1) / (s.a1 - s.a0);
            let second = (gb.g0 / ra0) / (s.a1 - s.a0);
            let (label, pairs, thresholds) = if a_rises {
                (
                    "equal opportunity (i)",
                    vec![(a0_hi, b0_hi), (theta_a_at_b_overlap, b1_lo), (a1_lo, theta_b_at_a_overlap)],
                    vec![first, second],
                )
            } else {
                (
                    "equal opportunity (ii)",
                    vec![(theta_a_at_b_overlap, b1_lo), (a0_hi, b0_hi)],
                    vec![first],
                )
            };
            let (pairs, thresholds) = trim_cells(pairs, thresholds)?;
            Ok(ClosedForm {
                case_label: label.into(),
                pairs,
                thresholds,
                extrapolated: false,
            })
        }
        FairnessCriterion::StatPar => {
            let map = |tb: f64| constraint_map(FairnessCriterion::StatPar, ga, gb, tb);
            let inv = |ta: f64| constraint_map(FairnessCriterion::StatPar, gb, ga, ta);
            let a_at_b0_hi = map(b0_hi)?;
            let b_at_a0_hi = inv(a0_hi)?;
            let a_at_b1_lo = map(b1_lo)?;
            let b_at_a1_lo = inv(a1_lo)?;
            let within = |x: f64, lo: f64, hi: f64| x >= lo && x <= hi;
            if !within(b_at_a0_hi, b0_hi, b1_hi) {
                return Err(Error::Case(format!(
                    "group b's threshold matching the top of group a's label-0 support ({b_at_a0_hi}) lies outside [{b0_hi}, {b1_hi}]"
                )));
            }
            let fully_worked = within(a_at_b0_hi, a0_lo, a1_lo)
                && within(a_at_b1_lo, a0_lo, a1_lo)
                && within(b_at_a1_lo, b0_hi, b1_hi);
            let four = vec![
                (a_at_b1_lo, b1_lo),
                (a_at_b0_hi, b0_hi),
                (a1_lo, b_at_a1_lo),
                (a0_hi, b_at_a0_hi),
            ];
            if !fully_worked {
                let lines = four.iter().map(|(ta, tb)| line_for(ga, gb, *ta, *tb)).collect();
                let (pairs, thresholds) = lower_envelope(lines);
                return Ok(ClosedForm {
                    case_label: "parity (extrapolated)".into(),
                    pairs,
                    thresholds,
                    extrapolated: true,
                });
            }
            let low = (s.b1 - s.b0) / (s.b0 + s.b1);
            let high = (s.a1 + s.a0) / (s.a0 - s.a1);
            let (label, pairs, thresholds) = match (b_rises, a_rises) {
                (true, false) => ("parity (i)", four, vec![low, 1.0, high]),
                (true, true) => ("parity (ii)", four[..3].to_vec(), vec![low, 1.0]),
                (false, false) => ("parity (iii)", four[1..].to_vec(), vec![1.0, high]),
                (false, true) => ("parity (iv)", four[1..3].to_vec(), vec![1.0]),
            };
            Ok(ClosedForm {
                case_label: label.into(),
                pairs,
                thresholds,
                extrapolated: false,
            })
        }
        other => Err(Error::Domain(format!("{other} has no closed-form table"))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::OneShotSolver;
    use super::*;
    use FairnessCriterion::*;

    fn assert_pairs(got: &[(f64, f64)], want: &[(f64, f64)], tol: f64) {
        assert_eq!(got.len(), want.len(), "{got:?} vs {want:?}");
        for (g, w) in got.iter().zip(want) {
            assert!((g.0 - w.0).abs() <= tol && (g.1 - w.1).abs() <= tol, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn shared_threshold_table() {
        let t = uniform_decision_table(Simple, &uniform_a(), &uniform_b()).unwrap();
        assert_pairs(&t.pairs, &[(17.0, 17.0), (20.0, 20.0)], 1e-12);
        let cross = (0.2 / 22.0 - 0.8 / 28.0) / (0.2 / 25.0 - 0.8 / 25.0);
        assert!((t.thresholds[0] - cross).abs() < 1e-9);
        assert!((cross - 0.8117).abs() < 1e-4);
        let cf = t.closed_form.unwrap();
        assert_eq!(cf.case_label, "shared (iv)");
        assert_pairs(&cf.pairs, &t.pairs, 1e-12);
        assert!((cf.thresholds[0] - t.thresholds[0]).abs() < 1e-9);
    }

    #[test]
    fn equal_opportunity_table() {
        let t = uniform_decision_table(EqOpt, &uniform_a(), &uniform_b()).unwrap();
        assert_pairs(&t.pairs, &[(10.91, 17.0), (20.0, 25.0)], 0.005);
        let cf = t.closed_form.unwrap();
        assert_pairs(&cf.pairs, &t.pairs, 1e-9);
        assert!((cf.thresholds[0] - t.thresholds[0]).abs() < 1e-9);
        assert!((t.thresholds[0] - 0.714).abs() < 1e-3);
    }

    #[test]
    fn parity_table() {
        let t = uniform_decision_table(StatPar, &uniform_a(), &uniform_b()).unwrap();
        assert_pairs(&t.pairs, &[(-1.02, 17.0), (8.39, 25.0), (10.0, 26.8), (20.0, 40.8)], 0.005);
        let cf = t.closed_form.unwrap();
        assert_eq!(cf.case_label, "parity (i)");
        assert!(!cf.extrapolated);
        assert_pairs(&cf.pairs, &t.pairs, 1e-9);
        for (x, y) in cf.thresholds.iter().zip(&t.thresholds) {
            assert!((x - y).abs() < 1e-9, "{:?} vs {:?}", cf.thresholds, t.thresholds);
        }
        assert!((t.thresholds[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn select_at_threshold_prefers_larger_theta_b() {
        let t = uniform_decision_table(StatPar, &uniform_a(), &uniform_b()).unwrap();
        assert_eq!(t.select(1.0), 2);
        assert_eq!(t.select(0.999), 1);
        assert_eq!(t.select(0.01), 0);
        assert_eq!(t.select(100.0), 3);
    }

    #[test]
    fn table_agrees_with_solver() {
        let (a, b) = (uniform_a(), uniform_b());
        for c in [Simple, EqOpt, StatPar] {
            let t = uniform_decision_table(c, &a, &b).unwrap();
            let solver = OneShotSolver::new(c, &a, &b).unwrap();
            for k in 0..200 {
                let ratio = 0.05 * 1.03f64.powi(k);
                let w = ratio / (1.0 + ratio);
                let p = solver.solve(w, 1.0 - w).unwrap();
                let (ta, tb) = t.pairs[t.select(ratio)];
                assert!((p.theta_a - ta).abs() < 1e-6 && (p.theta_b - tb).abs() < 1e-6, "{c} ratio {ratio}: {p:?}");
            }
        }
    }

    #[test]
    fn non_uniform_is_structure_error() {
        assert!(matches!(
            uniform_decision_table(Simple, &tn_a(), &tn_b()),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn envelope_merges_duplicates_and_orders() {
        let mk = |tb: f64, slope: f64, intercept: f64| Line { theta_a: tb, theta_b: tb, slope, intercept };
        let (pairs, thr) = lower_envelope(vec![
            mk(1.0, 0.5, 0.0),
            mk(2.0, 0.2, 0.1),
            mk(3.0, 0.2, 0.1),
            mk(4.0, 0.6, 0.3),
            mk(5.0, 0.0, 0.4),
        ]);
        assert_eq!(pairs, vec![(1.0, 1.0), (3.0, 3.0), (5.0, 5.0)]);
        assert!((thr[0] - 1.0 / 3.0).abs() < 1e-12 && (thr[1] - 1.5).abs() < 1e-12);
    }
}
