use super::{DecisionPair, FairnessCriterion, TIE};
use crate::numeric::{golden_section_min, linspace};
use crate::popmodel::GroupSpec;

const SCAN_POINTS: usize = 4001;
const REFINE_TOL: f64 = 1e-12;

/// Shared threshold minimizing the worse of the two group losses.
pub fn minmax_solution(ga: &GroupSpec, gb: &GroupSpec) -> DecisionPair {
    let worst = |x: f64| ga.expected_loss(x).max(gb.expected_loss(x));
    let lo = ga.support().0.min(gb.support().0);
    let hi = ga.support().1.max(gb.support().1);
    let grid = linspace(lo, hi, SCAN_POINTS);
    let values: Vec<f64> = grid.iter().map(|x| worst(*x)).collect();
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let best = values
        .iter()
        .rposition(|v| *v <= min_value + TIE)
        .expect("grid is nonempty");

    let left = grid[best.saturating_sub(1)];
    let right = grid[(best + 1).min(grid.len() - 1)];
    let refined = golden_section_min(left, right, REFINE_TOL, worst);
    let theta = if worst(refined) <= values[best] + TIE {
        refined
    } else {
        grid[best]
    };
    DecisionPair {
        theta_a: theta,
        theta_b: theta,
        criterion: FairnessCriterion::MinMax,
        residual: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    #[test]
    fn identical_groups_give_delta() {
        let g = tn_b();
        let p = minmax_solution(&g, &g);
        assert!((p.theta_a - g.unconstrained_minimizer().delta).abs() < 1e-6);
        assert_eq!(p.theta_a, p.theta_b);
    }

    #[test]
    fn beats_every_grid_point() {
        for (a, b) in [(uniform_a(), uniform_b()), (tn_a(), tn_b())] {
            let p = minmax_solution(&a, &b);
            let worst = |x: f64| a.expected_loss(x).max(b.expected_loss(x));
            let at = worst(p.theta_a);
            for x in linspace(-10.0, 50.0, 20_000) {
                assert!(at <= worst(x) + 1e-12, "{x}");
            }
            // Either the two losses are equal, or one curve dominates at its own minimum.
            let (la, lb) = (a.expected_loss(p.theta_a), b.expected_loss(p.theta_a));
            let dominant = if la > lb { &a } else { &b };
            assert!(
                (la - lb).abs() < 1e-6 || (p.theta_a - dominant.unconstrained_minimizer().delta).abs() < 1e-6
            );
        }
    }

    #[test]
    fn dominated_curve_ignored() {
        use crate::dist::SubgroupDistribution as D;
        // The second group's loss lies below the first one's at every threshold.
        let heavy = GroupSpec::new(0.5, 0.5, D::uniform(0.0, 20.0).unwrap(), D::uniform(1.0, 22.0).unwrap()).unwrap();
        let light = GroupSpec::new(0.5, 0.5, D::uniform(0.0, 10.0).unwrap(), D::uniform(9.5, 30.0).unwrap()).unwrap();
        for x in linspace(-5.0, 35.0, 4000) {
            assert!(light.expected_loss(x) <= heavy.expected_loss(x) + 1e-15);
        }
        let p = minmax_solution(&heavy, &light);
        assert!((p.theta_a - heavy.unconstrained_minimizer().delta).abs() < 1e-6, "{p:?}");
    }
}
