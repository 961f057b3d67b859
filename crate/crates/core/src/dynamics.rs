//! Retention functions and one-step population updates.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairsolve::DecisionPair;
use crate::numeric::linspace;
use crate::popmodel::{GroupSpec, Label, PopulationState, SubgroupCounts};

const MONOTONE_GRID: usize = 1001;

/// Probability that a user who experienced a given loss stays for another step.
#[derive(Debug, Clone, PartialEq)]
pub enum RetentionFn {
    OneMinusX,
    OneMinusXSquared,
    /// Piecewise-linear through `(loss, retention)` knots spanning losses 0 to 1.
    Table(Vec<(f64, f64)>),
}

impl RetentionFn {
    pub fn table(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Structure("retention table needs at least two knots".into()));
        }
        let (first, last) = (knots[0].0, knots[knots.len() - 1].0);
        if first != 0.0 || last != 1.0 {
            return Err(Error::Structure(format!(
                "retention knots must span losses 0 to 1, got {first} to {last}"
            )));
        }
        if knots.iter().any(|(_, r)| !(0.0..=1.0).contains(r)) {
            return Err(Error::Structure("retention values must lie in [0, 1]".into()));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 < w[0].1)) {
            return Err(Error::Structure(
                "retention knots need strictly increasing losses and strictly decreasing retention".into(),
            ));
        }
        Ok(Self::Table(knots))
    }

    /// Retention at `loss`, clamped to `[0, 1]` first.
    pub fn eval(&self, loss: f64) -> f64 {
        let x = loss.clamp(0.0, 1.0);
        match self {
            Self::OneMinusX => 1.0 - x,
            Self::OneMinusXSquared => 1.0 - x * x,
            Self::Table(knots) => {
                let i = knots.partition_point(|(l, _)| *l <= x).clamp(1, knots.len() - 1);
                let ((x0, y0), (x1, y1)) = (knots[i - 1], knots[i]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        let values: Vec<f64> = linspace(0.0, 1.0, MONOTONE_GRID).into_iter().map(|x| self.eval(x)).collect();
        values.windows(2).all(|w| w[1] < w[0]) && values.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    /// `N' = N * retention(loss) + arrivals`.
    Accuracy,
    /// `N' = (N + arrivals) * retention(loss)`: newcomers also face the decision.
    ArrivalCoupled,
    /// Retention driven by the label-0 acceptance rate instead of the loss.
    FnDriven,
    /// Each label subgroup reacts to its own loss; arrivals split by label mix.
    Subgroup,
    /// Accuracy dynamics with Poisson arrivals.
    RandomArrival,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub kind: DynamicsKind,
    pub retention: RetentionFn,
    pub beta_a: f64,
    pub beta_b: f64,
    /// Poisson means, used by [`DynamicsKind::RandomArrival`].
    pub arrival_mean_a: f64,
    pub arrival_mean_b: f64,
    pub seed: u64,
}

/// Limit of a population held at constant losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    pub n_a: f64,
    pub n_b: f64,
    pub alpha_a: f64,
    pub total_loss: f64,
}

impl DynamicsModel {
    pub fn new(kind: DynamicsKind, retention: RetentionFn, beta_a: f64, beta_b: f64) -> Result<Self> {
        if !(beta_a >= 0.0 && beta_b >= 0.0 && beta_a.is_finite() && beta_b.is_finite()) {
            return Err(Error::Domain(format!("arrivals must be finite and nonnegative, got ({beta_a}, {beta_b})")));
        }
        Ok(Self {
            kind,
            retention,
            beta_a,
            beta_b,
            arrival_mean_a: beta_a,
            arrival_mean_b: beta_b,
            seed: 0,
        })
    }

    /// Poisson arrivals with the given means, drawn from a generator seeded by `seed`.
    pub fn random_arrivals(retention: RetentionFn, mean_a: f64, mean_b: f64, seed: u64) -> Result<Self> {
        let mut model = Self::new(DynamicsKind::RandomArrival, retention, mean_a, mean_b)?;
        model.seed = seed;
        Ok(model)
    }

    /// Same model with different arrival rates.
    pub fn with_arrivals(&self, beta_a: f64, beta_b: f64) -> Result<Self> {
        let mut model = Self::new(self.kind, self.retention.clone(), beta_a, beta_b)?;
        model.seed = self.seed;
        Ok(model)
    }

    /// Expected arrivals per step for each group.
    pub fn expected_arrivals(&self) -> (f64, f64) {
        match self.kind {
            DynamicsKind::RandomArrival => (self.arrival_mean_a, self.arrival_mean_b),
            _ => (self.beta_a, self.beta_b),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Starting state with each group's count equal to its expected arrivals.
    pub fn near_empty_state(&self, ga: &GroupSpec, gb: &GroupSpec) -> Result<PopulationState> {
        let (a, b) = self.expected_arrivals();
        match self.kind {
            DynamicsKind::Subgroup => PopulationState::split_by_labels(a, b, ga, gb),
            _ => PopulationState::new(a, b),
        }
    }

    /// Advances the population by one step under the given decision.
    pub fn step<R: Rng>(
        &self,
        state: &PopulationState,
        pair: &DecisionPair,
        ga: &GroupSpec,
        gb: &GroupSpec,
        rng: &mut R,
    ) -> Result<PopulationState> {
        let keep = |loss: f64| self.retention.eval(loss);
        match self.kind {
            DynamicsKind::Accuracy => PopulationState::new(
                state.n_a * keep(ga.expected_loss(pair.theta_a)) + self.beta_a,
                state.n_b * keep(gb.expected_loss(pair.theta_b)) + self.beta_b,
            ),
            DynamicsKind::ArrivalCoupled => PopulationState::new(
                (state.n_a + self.beta_a) * keep(ga.expected_loss(pair.theta_a)),
                (state.n_b + self.beta_b) * keep(gb.expected_loss(pair.theta_b)),
            ),
            DynamicsKind::FnDriven => PopulationState::new(
                state.n_a * keep(ga.false_positive_rate(pair.theta_a)) + self.beta_a,
                state.n_b * keep(gb.false_positive_rate(pair.theta_b)) + self.beta_b,
            ),
            DynamicsKind::Subgroup => {
                let s = state.subgroups.ok_or_else(|| {
                    Error::Model("subgroup dynamics need per-label counts in the state".into())
                })?;
                let next = |n: f64, g: &GroupSpec, label: Label, theta: f64, beta: f64| {
                    n * keep(g.subgroup_loss(label, theta)) + g.label_share(label) * beta
                };
                PopulationState::with_subgroups(SubgroupCounts {
                    a0: next(s.a0, ga, Label::Negative, pair.theta_a, self.beta_a),
                    a1: next(s.a1, ga, Label::Positive, pair.theta_a, self.beta_a),
                    b0: next(s.b0, gb, Label::Negative, pair.theta_b, self.beta_b),
                    b1: next(s.b1, gb, Label::Positive, pair.theta_b, self.beta_b),
                })
            }
            DynamicsKind::RandomArrival => {
                let arrivals_a = draw_poisson(self.arrival_mean_a, rng)?;
                let arrivals_b = draw_poisson(self.arrival_mean_b, rng)?;
                PopulationState::new(
                    state.n_a * keep(ga.expected_loss(pair.theta_a)) + arrivals_a,
                    state.n_b * keep(gb.expected_loss(pair.theta_b)) + arrivals_b,
                )
            }
        }
    }

    /// Limiting counts, group-a share and total loss under constant losses.
    ///
    /// `losses` are the quantities fed to the retention function: expected
    /// losses for accuracy dynamics, label-0 acceptance rates for the
    /// acceptance-driven variant.
    pub fn fixed_point(&self, losses: (f64, f64)) -> Result<FixedPoint> {
        if !matches!(self.kind, DynamicsKind::Accuracy | DynamicsKind::FnDriven) {
            return Err(Error::Model(format!("no closed-form limit for {:?} dynamics", self.kind)));
        }
        let (la, lb) = losses;
        let attrition = |l: f64, name: char| {
            let a = 1.0 - self.retention.eval(l);
            if a <= 0.0 {
                Err(Error::Divergence(format!("group {name} never leaves at loss {l}")))
            } else {
                Ok(a)
            }
        };
        let n_a = self.beta_a / attrition(la, 'a')?;
        let n_b = self.beta_b / attrition(lb, 'b')?;
        if n_a + n_b <= 0.0 {
            return Err(Error::Domain("no arrivals, the limit population is empty".into()));
        }
        let alpha_a = n_a / (n_a + n_b);
        Ok(FixedPoint {
            n_a,
            n_b,
            alpha_a,
            total_loss: lb + (la - lb) * alpha_a,
        })
    }
}

fn draw_poisson<R: Rng>(mean: f64, rng: &mut R) -> Result<f64> {
    if mean == 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::Domain(format!("arrival mean {mean}: {e}")))?;
    Ok(dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SubgroupDistribution;
    use crate::fairsolve::FairnessCriterion;

    fn groups() -> (GroupSpec, GroupSpec) {
        let ga = GroupSpec::with_negative_share(
            0.8,
            SubgroupDistribution::uniform(-5.0, 20.0).unwrap(),
            SubgroupDistribution::uniform(10.0, 35.0).unwrap(),
        )
        .unwrap();
        let gb = GroupSpec::with_negative_share(
            0.2,
            SubgroupDistribution::uniform(3.0, 25.0).unwrap(),
            SubgroupDistribution::uniform(17.0, 45.0).unwrap(),
        )
        .unwrap();
        (ga, gb)
    }

    fn pair(theta_a: f64, theta_b: f64) -> DecisionPair {
        DecisionPair {
            theta_a,
            theta_b,
            criterion: FairnessCriterion::Simple,
            residual: 0.0,
        }
    }

    #[test]
    fn accuracy_examples() {
        let (ga, gb) = groups();
        let m = DynamicsModel::new(DynamicsKind::Accuracy, RetentionFn::OneMinusX, 5.0, 5.0).unwrap();
        let empty = PopulationState::new(0.0, 0.0).unwrap();
        let next = m.step(&empty, &pair(0.0, 0.0), &ga, &gb, &mut m.rng()).unwrap();
        assert_eq!((next.n_a, next.n_b), (5.0, 5.0));
    }

    #[test]
    fn loss_point_two_updates() {
        let (_, gb) = groups();
        // Group with loss 0.2 at threshold 0: label-0 share 0.2 all accepted.
        let g = GroupSpec::with_negative_share(
            0.2,
            SubgroupDistribution::uniform(-5.0, 20.0).unwrap(),
            SubgroupDistribution::uniform(10.0, 35.0).unwrap(),
        )
        .unwrap();
        assert!((g.expected_loss(-5.0) - 0.2).abs() < 1e-15);
        let state = PopulationState::new(1000.0, 0.0).unwrap();
        let m = DynamicsModel::new(DynamicsKind::Accuracy, RetentionFn::OneMinusX, 100.0, 0.0).unwrap();
        let next = m.step(&state, &pair(-5.0, 0.0), &g, &gb, &mut m.rng()).unwrap();
        assert!((next.n_a - 900.0).abs() < 1e-9);
        let m = DynamicsModel::new(DynamicsKind::ArrivalCoupled, RetentionFn::OneMinusX, 100.0, 0.0).unwrap();
        let next = m.step(&state, &pair(-5.0, 0.0), &g, &gb, &mut m.rng()).unwrap();
        assert!((next.n_a - 880.0).abs() < 1e-9);
    }

    #[test]
    fn acceptance_driven_and_subgroup_updates() {
        let (ga, gb) = groups();
        let state = PopulationState::new(100.0, 100.0).unwrap();
        let m = DynamicsModel::new(DynamicsKind::FnDriven, RetentionFn::OneMinusX, 10.0, 10.0).unwrap();
        let next = m.step(&state, &pair(20.0, 17.0), &ga, &gb, &mut m.rng()).unwrap();
        assert!((next.n_a - 110.0).abs() < 1e-12);
        assert!((next.n_b - (100.0 * (1.0 - 8.0 / 22.0) + 10.0)).abs() < 1e-12);

        let m = DynamicsModel::new(DynamicsKind::Subgroup, RetentionFn::OneMinusX, 10.0, 10.0).unwrap();
        assert!(matches!(
            m.step(&state, &pair(20.0, 17.0), &ga, &gb, &mut m.rng()),
            Err(Error::Model(_))
        ));
        let split = PopulationState::split_by_labels(100.0, 100.0, &ga, &gb).unwrap();
        let next = m.step(&split, &pair(20.0, 17.0), &ga, &gb, &mut m.rng()).unwrap();
        let s = next.subgroups.unwrap();
        assert!((s.a0 - (80.0 + 8.0)).abs() < 1e-12);
        assert!((s.a1 - (20.0 * 0.6 + 2.0)).abs() < 1e-12);
        assert!(next.is_consistent());
    }

    #[test]
    fn fixed_point_examples() {
        let m = DynamicsModel::new(DynamicsKind::Accuracy, RetentionFn::OneMinusXSquared, 7000.0, 3000.0).unwrap();
        let (_, gb) = groups();
        let lb = gb.expected_loss(20.0);
        assert!((lb - 0.131169).abs() < 1e-6);
        let fp = m.fixed_point((0.08, lb)).unwrap();
        assert!((fp.n_a - 1_093_750.0).abs() < 1e-6);
        assert!((fp.n_b - 174_360.0).abs() / 174_360.0 < 1e-4, "{}", fp.n_b);
        assert!((fp.alpha_a - 0.8625).abs() < 1e-4, "{}", fp.alpha_a);
        let plug = lb + (0.08 - lb) / (1.0 + (3000.0 / 7000.0) * (0.08f64.powi(2)) / lb.powi(2));
        assert!((fp.total_loss - plug).abs() < 1e-12);

        let eq = m.fixed_point((0.1, 0.1)).unwrap();
        assert!((eq.alpha_a - 0.7).abs() < 1e-12);
        let sym = m.with_arrivals(5.0, 5.0).unwrap().fixed_point((0.3, 0.3)).unwrap();
        assert!((sym.alpha_a - 0.5).abs() < 1e-12);
        assert!(matches!(m.fixed_point((0.0, 0.1)), Err(Error::Divergence(_))));
    }

    #[test]
    fn constant_decisions_converge_to_fixed_point() {
        let (ga, gb) = groups();
        let m = DynamicsModel::new(DynamicsKind::Accuracy, RetentionFn::OneMinusXSquared, 7000.0, 3000.0).unwrap();
        let p = pair(20.0, 20.0);
        let fp = m.fixed_point((ga.expected_loss(20.0), gb.expected_loss(20.0))).unwrap();
        let mut state = m.near_empty_state(&ga, &gb).unwrap();
        let mut rng = m.rng();
        let mut prev = state;
        for _ in 0..5000 {
            state = m.step(&state, &p, &ga, &gb, &mut rng).unwrap();
            assert!(state.n_a >= prev.n_a && state.n_b >= prev.n_b);
            prev = state;
        }
        assert!((state.n_a - fp.n_a).abs() / fp.n_a < 1e-3);
        assert!((state.n_b - fp.n_b).abs() / fp.n_b < 1e-3);
    }

    #[test]
    fn higher_loss_keeps_fewer_users() {
        let (ga, gb) = groups();
        let m = DynamicsModel::new(DynamicsKind::Accuracy, RetentionFn::OneMinusX, 10.0, 10.0).unwrap();
        let state = PopulationState::new(500.0, 500.0).unwrap();
        let mut last = f64::INFINITY;
        // Group a's loss rises as its threshold moves above 20.
        for theta in [20.0, 24.0, 28.0, 32.0] {
            let next = m.step(&state, &pair(theta, 17.0), &ga, &gb, &mut m.rng()).unwrap();
            assert!(next.n_a < last);
            last = next.n_a;
        }
    }

    #[test]
    fn random_arrivals_reproducible_with_right_mean() {
        let (ga, gb) = groups();
        let m = DynamicsModel::random_arrivals(RetentionFn::OneMinusX, 40.0, 7.5, 11).unwrap();
        let zero = PopulationState::new(0.0, 0.0).unwrap();
        let run = || {
            let mut rng = m.rng();
            (0..10_000)
                .map(|_| m.step(&zero, &pair(0.0, 0.0), &ga, &gb, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let (x, y) = (run(), run());
        assert_eq!(x, y);
        for (mean, draws) in [(40.0, x.iter().map(|s| s.n_a).collect::<Vec<_>>()), (7.5, x.iter().map(|s| s.n_b).collect())] {
            let avg = draws.iter().sum::<f64>() / draws.len() as f64;
            let se = (mean / draws.len() as f64).sqrt();
            assert!((avg - mean).abs() < 3.0 * se, "{avg} vs {mean}");
        }
    }

    #[test]
    fn retention_tables() {
        let t = RetentionFn::table(vec![(0.0, 1.0), (0.5, 0.4), (1.0, 0.0)]).unwrap();
        assert!((t.eval(0.25) - 0.7).abs() < 1e-15);
        assert!((t.eval(0.75) - 0.2).abs() < 1e-15);
        assert_eq!(t.eval(1.5), 0.0);
        assert!(t.is_strictly_decreasing());
        assert!(RetentionFn::OneMinusX.is_strictly_decreasing());
        assert!(RetentionFn::OneMinusXSquared.is_strictly_decreasing());
        assert!(RetentionFn::table(vec![(0.0, 1.0), (0.5, 1.0), (1.0, 0.0)]).is_err());
        assert!(RetentionFn::table(vec![(0.0, 1.0), (0.9, 0.5)]).is_err());
    }
}
