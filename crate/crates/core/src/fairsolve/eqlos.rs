use serde::Serialize;

use super::{DecisionPair, FairnessCriterion};
use crate::numeric::bisect_root;
use crate::popmodel::GroupSpec;

const ROOT_TOL: f64 = 1e-13;

/// Equal-loss decision: both groups see the larger of their two minimal losses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqLosSolution {
    pub pair: DecisionPair,
    pub target_loss: f64,
    /// Every pair reaching the target, including the primary one.
    pub alternates: Vec<DecisionPair>,
}

/// Thresholds where `g`'s loss equals `target`, one per monotone branch.
fn level_roots(g: &GroupSpec, target: f64) -> Vec<f64> {
    let delta = g.unconstrained_minimizer().delta;
    if g.expected_loss(delta) >= target {
        return vec![delta];
    }
    let gap = |x: f64| g.expected_loss(x) - target;
    let (lo, hi) = g.support();
    let mut roots = Vec::with_capacity(2);
    if gap(lo) >= 0.0 {
        roots.push(bisect_root(lo, delta, ROOT_TOL, gap));
    }
    if gap(hi) >= 0.0 {
        roots.push(bisect_root(delta, hi, ROOT_TOL, gap));
    }
    roots
}

/// Picks the root on the side facing `toward`; the right one when `toward` is
/// the minimizer itself.
fn facing_root(roots: &[f64], delta: f64, toward: f64) -> f64 {
    let left = roots.iter().copied().filter(|r| *r <= delta).reduce(f64::min);
    let right = roots.iter().copied().filter(|r| *r >= delta).reduce(f64::max);
    if toward < delta {
        left.or(right)
    } else {
        right.or(left)
    }
    .expect("a loss level between the minimum and the label shares is always reached")
}

pub fn eqlos_solution(ga: &GroupSpec, gb: &GroupSpec) -> EqLosSolution {
    let delta_a = ga.unconstrained_minimizer().delta;
    let delta_b = gb.unconstrained_minimizer().delta;
    let min_a = ga.expected_loss(delta_a);
    let min_b = gb.expected_loss(delta_b);
    let target_loss = min_a.max(min_b);

    let make = |theta_a: f64, theta_b: f64| DecisionPair {
        theta_a,
        theta_b,
        criterion: FairnessCriterion::EqLos,
        residual: (ga.expected_loss(theta_a) - gb.expected_loss(theta_b)).abs(),
    };

    let (pair, alternates) = if min_a >= min_b {
        let roots = level_roots(gb, target_loss);
        let primary = facing_root(&roots, delta_b, delta_a);
        (make(delta_a, primary), roots.iter().map(|r| make(delta_a, *r)).collect())
    } else {
        let roots = level_roots(ga, target_loss);
        let primary = facing_root(&roots, delta_a, delta_b);
        (make(primary, delta_b), roots.iter().map(|r| make(*r, delta_b)).collect())
    };
    EqLosSolution {
        pair,
        target_loss,
        alternates,
    }
}
