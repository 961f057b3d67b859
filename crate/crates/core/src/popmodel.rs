//! Group specifications, expected 0-1 loss curves and classification rates.

use serde::{Deserialize, Serialize};

use crate::dist::SubgroupDistribution;
use crate::error::{Error, Result};
use crate::numeric::bisect_root;

const LABEL_SUM_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-9;
const SUBGROUP_SUM_TOL: f64 = 1e-9;
const DELTA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    /// Label 0, misclassified when accepted.
    Negative,
    /// Label 1, misclassified when rejected.
    Positive,
}

/// Which part of the loss curve holds the unconstrained minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    LowerEnd,
    Interior,
    UpperEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Minimizer {
    pub delta: f64,
    pub branch: Branch,
}

/// One group: its label mix and the feature density of each label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSpec {
    pub g0: f64,
    pub g1: f64,
    pub f0: SubgroupDistribution,
    pub f1: SubgroupDistribution,
}

impl GroupSpec {
    pub fn new(g0: f64, g1: f64, f0: SubgroupDistribution, f1: SubgroupDistribution) -> Result<Self> {
        if !(g0 >= 0.0 && g1 >= 0.0 && g0.is_finite() && g1.is_finite()) {
            return Err(Error::Structure(format!(
                "label fractions must be nonnegative, got g0={g0}, g1={g1}"
            )));
        }
        if (g0 + g1 - 1.0).abs() > LABEL_SUM_TOL {
            return Err(Error::Structure(format!(
                "label fractions must sum to 1, got g0 + g1 = {}",
                g0 + g1
            )));
        }
        if !(f0.lo() < f1.lo() && f1.lo() < f0.hi() && f0.hi() < f1.hi()) {
            return Err(Error::Structure(format!(
                "supports must satisfy lo(f0) < lo(f1) < hi(f0) < hi(f1), got f0=[{}, {}], f1=[{}, {}]",
                f0.lo(),
                f0.hi(),
                f1.lo(),
                f1.hi()
            )));
        }
        Ok(Self { g0, g1, f0, f1 })
    }

    /// Group with label-0 fraction `g0`.
    pub fn with_negative_share(g0: f64, f0: SubgroupDistribution, f1: SubgroupDistribution) -> Result<Self> {
        Self::new(g0, 1.0 - g0, f0, f1)
    }

    pub fn is_uniform(&self) -> bool {
        self.f0.is_uniform() && self.f1.is_uniform()
    }

    /// `[lo(f0), hi(f1)]`, where the feature density is positive.
    pub fn support(&self) -> (f64, f64) {
        (self.f0.lo(), self.f1.hi())
    }

    /// `[lo(f1), hi(f0)]`, where both label densities are positive.
    pub fn overlap(&self) -> (f64, f64) {
        (self.f1.lo(), self.f0.hi())
    }

    /// The four support endpoints, where the loss curve may have kinks.
    pub fn breakpoints(&self) -> [f64; 4] {
        [self.f0.lo(), self.f1.lo(), self.f0.hi(), self.f1.hi()]
    }

    pub fn label_share(&self, label: Label) -> f64 {
        match label {
            Label::Negative => self.g0,
            Label::Positive => self.g1,
        }
    }

    pub fn expected_loss(&self, theta: f64) -> f64 {
        (self.g1 * self.f1.cdf(theta) + self.g0 * self.f0.sf(theta)).clamp(0.0, 1.0)
    }

    /// Derivative of [`expected_loss`](Self::expected_loss) where it exists.
    pub fn loss_slope(&self, theta: f64) -> f64 {
        self.g1 * self.f1.pdf(theta) - self.g0 * self.f0.pdf(theta)
    }

    /// Probability that a random member of the group is accepted (labelled 1).
    pub fn acceptance_rate(&self, theta: f64) -> f64 {
        (self.g0 * self.f0.sf(theta) + self.g1 * self.f1.sf(theta)).clamp(0.0, 1.0)
    }

    /// Feature density of the whole group, the negative derivative of the acceptance rate.
    pub fn mixture_pdf(&self, theta: f64) -> f64 {
        self.g0 * self.f0.pdf(theta) + self.g1 * self.f1.pdf(theta)
    }

    /// Fraction of label-0 members that are accepted.
    pub fn false_positive_rate(&self, theta: f64) -> f64 {
        self.f0.sf(theta)
    }

    /// Loss experienced by the members of one label.
    pub fn subgroup_loss(&self, label: Label, theta: f64) -> f64 {
        match label {
            Label::Negative => self.f0.sf(theta),
            Label::Positive => self.f1.cdf(theta),
        }
    }

    /// Global minimizer of the loss curve.
    ///
    /// The minimum lies on the overlap interval, since the loss falls to its
    /// left and rises to its right. When the density difference changes sign
    /// on the overlap the crossing is bisected; otherwise the minimum sits at
    /// an overlap end.
    pub fn unconstrained_minimizer(&self) -> Minimizer {
        let (lo, hi) = self.overlap();
        let slope_lo = self.loss_slope(lo);
        let slope_hi = self.loss_slope(hi);
        let mut best = if slope_lo >= 0.0 {
            Minimizer { delta: lo, branch: Branch::LowerEnd }
        } else if slope_hi <= 0.0 {
            Minimizer { delta: hi, branch: Branch::UpperEnd }
        } else {
            Minimizer {
                delta: bisect_root(lo, hi, DELTA_TOL, |x| self.loss_slope(x)),
                branch: Branch::Interior,
            }
        };
        // Guard against a non-monotone density difference picking a local minimum.
        let mut best_loss = self.expected_loss(best.delta);
        for (delta, branch) in [(lo, Branch::LowerEnd), (hi, Branch::UpperEnd)] {
            let loss = self.expected_loss(delta);
            if loss < best_loss - 1e-15 {
                best = Minimizer { delta, branch };
                best_loss = loss;
            }
        }
        best
    }

    pub fn min_loss(&self) -> f64 {
        self.expected_loss(self.unconstrained_minimizer().delta)
    }
}

/// Population-weighted loss of the pair of decisions.
pub fn total_loss(
    ga: &GroupSpec,
    gb: &GroupSpec,
    alpha_a: f64,
    alpha_b: f64,
    theta_a: f64,
    theta_b: f64,
) -> Result<f64> {
    check_weights(alpha_a, alpha_b)?;
    Ok(alpha_a * ga.expected_loss(theta_a) + alpha_b * gb.expected_loss(theta_b))
}

pub(crate) fn check_weights(alpha_a: f64, alpha_b: f64) -> Result<()> {
    if !(alpha_a >= 0.0 && alpha_b >= 0.0) || (alpha_a + alpha_b - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Domain(format!(
            "group weights must be nonnegative and sum to 1, got ({alpha_a}, {alpha_b})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupCounts {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
}

/// Expected number of active users in each group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub n_a: f64,
    pub n_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgroups: Option<SubgroupCounts>,
}

impl PopulationState {
    pub fn new(n_a: f64, n_b: f64) -> Result<Self> {
        if !(n_a >= 0.0 && n_b >= 0.0 && n_a.is_finite() && n_b.is_finite()) {
            return Err(Error::Domain(format!(
                "counts must be finite and nonnegative, got ({n_a}, {n_b})"
            )));
        }
        Ok(Self { n_a, n_b, subgroups: None })
    }

    pub fn with_subgroups(counts: SubgroupCounts) -> Result<Self> {
        let all = [counts.a0, counts.a1, counts.b0, counts.b1];
        if all.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::Domain(format!(
                "subgroup counts must be finite and nonnegative, got {counts:?}"
            )));
        }
        Ok(Self {
            n_a: counts.a0 + counts.a1,
            n_b: counts.b0 + counts.b1,
            subgroups: Some(counts),
        })
    }

    /// Splits each group's count by its label mix.
    pub fn split_by_labels(n_a: f64, n_b: f64, ga: &GroupSpec, gb: &GroupSpec) -> Result<Self> {
        Self::with_subgroups(SubgroupCounts {
            a0: n_a * ga.g0,
            a1: n_a * ga.g1,
            b0: n_b * gb.g0,
            b1: n_b * gb.g1,
        })
    }

    pub fn total(&self) -> f64 {
        self.n_a + self.n_b
    }

    /// Share of group a among active users; `None` for an empty system.
    pub fn proportion_a(&self) -> Option<f64> {
        let total = self.total();
        (total > 0.0).then(|| self.n_a / total)
    }

    pub fn is_consistent(&self) -> bool {
        match self.subgroups {
            None => true,
            Some(s) => {
                (s.a0 + s.a1 - self.n_a).abs() <= SUBGROUP_SUM_TOL * self.n_a.max(1.0)
                    && (s.b0 + s.b1 - self.n_b).abs() <= SUBGROUP_SUM_TOL * self.n_b.max(1.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::linspace;

    fn uniform_a() -> GroupSpec {
        GroupSpec::with_negative_share(
            0.8,
            SubgroupDistribution::uniform(-5.0, 20.0).unwrap(),
            SubgroupDistribution::uniform(10.0, 35.0).unwrap(),
        )
        .unwrap()
    }

    fn uniform_b() -> GroupSpec {
        GroupSpec::with_negative_share(
            0.2,
            SubgroupDistribution::uniform(3.0, 25.0).unwrap(),
            SubgroupDistribution::uniform(17.0, 45.0).unwrap(),
        )
        .unwrap()
    }

    fn tn_a() -> GroupSpec {
        GroupSpec::with_negative_share(
            0.4,
            SubgroupDistribution::truncated_normal(4.0, 5.0, -8.0, 19.0).unwrap(),
            SubgroupDistribution::truncated_normal(20.0, 6.0, 5.0, 35.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn expected_loss_examples() {
        assert!((uniform_a().expected_loss(20.0) - 0.08).abs() < 1e-15);
        assert!((uniform_b().expected_loss(17.0) - 0.2 * 8.0 / 22.0).abs() < 1e-15);
        assert!((uniform_a().expected_loss(-10.0) - 0.8).abs() < 1e-15);
        assert!((tn_a().expected_loss(-8.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn total_loss_examples() {
        let (a, b) = (uniform_a(), uniform_b());
        let t = total_loss(&a, &b, 0.5, 0.5, 20.0, 17.0).unwrap();
        assert!((t - (0.04 + 0.1 * 8.0 / 22.0)).abs() < 1e-15);
        assert!((total_loss(&a, &b, 1.0, 0.0, 20.0, 17.0).unwrap() - 0.08).abs() < 1e-15);
        assert!(matches!(total_loss(&a, &b, 0.7, 0.7, 0.0, 0.0), Err(Error::Domain(_))));
        let sym = total_loss(&a, &a, 0.3, 0.7, 12.0, 12.0).unwrap();
        let swapped = total_loss(&a, &a, 0.7, 0.3, 12.0, 12.0).unwrap();
        assert!((sym - swapped).abs() < 1e-15);
    }

    #[test]
    fn rate_examples() {
        let (a, b) = (uniform_a(), uniform_b());
        assert!((a.acceptance_rate(20.0) - 0.12).abs() < 1e-15);
        assert_eq!(a.acceptance_rate(-5.0), 1.0);
        assert_eq!(a.acceptance_rate(35.0), 0.0);
        assert_eq!(b.false_positive_rate(25.0), 0.0);
        assert!((b.false_positive_rate(17.0) - 8.0 / 22.0).abs() < 1e-15);
        assert_eq!(b.false_positive_rate(3.0), 1.0);
        assert_eq!(b.subgroup_loss(Label::Positive, 17.0), 0.0);
        assert!((b.subgroup_loss(Label::Negative, 17.0) - 8.0 / 22.0).abs() < 1e-15);
        assert_eq!(b.subgroup_loss(Label::Positive, 45.0), 1.0);
    }

    #[test]
    fn minimizer_examples() {
        let m = uniform_a().unconstrained_minimizer();
        assert_eq!((m.delta, m.branch), (20.0, Branch::UpperEnd));
        let m = uniform_b().unconstrained_minimizer();
        assert_eq!((m.delta, m.branch), (17.0, Branch::LowerEnd));

        let sym = GroupSpec::new(
            0.5,
            0.5,
            SubgroupDistribution::truncated_normal(4.0, 5.0, -10.0, 16.0).unwrap(),
            SubgroupDistribution::truncated_normal(12.0, 5.0, 0.0, 26.0).unwrap(),
        )
        .unwrap();
        let m = sym.unconstrained_minimizer();
        assert_eq!(m.branch, Branch::Interior);
        assert!((m.delta - 8.0).abs() < 1e-6, "{}", m.delta);
    }

    #[test]
    fn minimizer_is_global() {
        for g in [uniform_a(), uniform_b(), tn_a()] {
            let delta = g.unconstrained_minimizer().delta;
            let best = g.expected_loss(delta);
            let (lo, hi) = g.support();
            for x in linspace(lo - 1.0, hi + 1.0, 10_000) {
                assert!(best <= g.expected_loss(x) + 1e-14, "{x}");
            }
        }
    }

    #[test]
    fn loss_is_monotone_outside_overlap() {
        for g in [uniform_a(), uniform_b(), tn_a()] {
            let left = linspace(g.f0.lo(), g.f1.lo(), 500);
            assert!(left.windows(2).all(|w| g.expected_loss(w[1]) <= g.expected_loss(w[0])));
            let right = linspace(g.f0.hi(), g.f1.hi(), 500);
            assert!(right.windows(2).all(|w| g.expected_loss(w[1]) >= g.expected_loss(w[0])));
            let all = linspace(g.support().0 - 1.0, g.support().1 + 1.0, 2000);
            assert!(all.windows(2).all(|w| g.acceptance_rate(w[1]) <= g.acceptance_rate(w[0])));
            assert!(all
                .windows(2)
                .all(|w| g.false_positive_rate(w[1]) <= g.false_positive_rate(w[0])));
        }
    }

    #[test]
    fn total_loss_linear_in_weights() {
        let (a, b) = (uniform_a(), uniform_b());
        let l0 = total_loss(&a, &b, 0.0, 1.0, 14.0, 21.0).unwrap();
        let l1 = total_loss(&a, &b, 1.0, 0.0, 14.0, 21.0).unwrap();
        for w in [0.1, 0.37, 0.9] {
            let lw = total_loss(&a, &b, w, 1.0 - w, 14.0, 21.0).unwrap();
            assert!((lw - (w * l1 + (1.0 - w) * l0)).abs() < 1e-15);
        }
    }

    #[test]
    fn group_validation() {
        let f0 = SubgroupDistribution::uniform(-5.0, 20.0).unwrap();
        let f1 = SubgroupDistribution::uniform(10.0, 35.0).unwrap();
        assert!(GroupSpec::new(0.5, 0.6, f0, f1).is_err());
        assert!(GroupSpec::new(-0.1, 1.1, f0, f1).is_err());
        assert!(GroupSpec::new(0.5, 0.5, f1, f0).is_err());
    }

    #[test]
    fn population_state_helpers() {
        let s = PopulationState::new(3.0, 1.0).unwrap();
        assert_eq!(s.proportion_a(), Some(0.75));
        assert_eq!(PopulationState::new(0.0, 0.0).unwrap().proportion_a(), None);
        assert!(PopulationState::new(-1.0, 0.0).is_err());
        let split = PopulationState::split_by_labels(100.0, 50.0, &uniform_a(), &uniform_b()).unwrap();
        assert!(split.is_consistent());
        assert!((split.subgroups.unwrap().a0 - 80.0).abs() < 1e-12);
    }
}
