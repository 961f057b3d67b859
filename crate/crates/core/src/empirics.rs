//! Decisions learned from finite samples of the current users.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::fairsolve::{DecisionPair, FairnessCriterion, GreedyDecider};
use crate::horizon::{simulate_with, ConvergenceSpec, Trajectory};
use crate::popmodel::{GroupSpec, Label, PopulationState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub feature: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSample {
    /// Support of the generating group; its ends are always candidate thresholds.
    pub support: (f64, f64),
    pub samples: Vec<Sample>,
}

impl GroupSample {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn negative_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label == Label::Negative).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    pub a: GroupSample,
    pub b: GroupSample,
    pub seed: u64,
}

fn draw_group<R: Rng>(g: &GroupSpec, count: f64, rng: &mut R) -> Result<GroupSample> {
    if !(count.is_finite() && count >= 0.0) {
        return Err(Error::Domain(format!("sample count {count} is not a finite nonnegative number")));
    }
    let n = count.round() as usize;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (label, dist) = if rng.gen::<f64>() < g.g0 {
            (Label::Negative, &g.f0)
        } else {
            (Label::Positive, &g.f1)
        };
        samples.push(Sample {
            feature: dist.quantile(rng.gen::<f64>())?,
            label,
        });
    }
    Ok(GroupSample {
        support: g.support(),
        samples,
    })
}

fn draw_with<R: Rng>(ga: &GroupSpec, gb: &GroupSpec, state: &PopulationState, seed: u64, rng: &mut R) -> Result<SampleSet> {
    Ok(SampleSet {
        a: draw_group(ga, state.n_a, rng)?,
        b: draw_group(gb, state.n_b, rng)?,
        seed,
    })
}

/// Draws `round(N_k)` labelled users per group from the population model.
pub fn draw_samples(ga: &GroupSpec, gb: &GroupSpec, state: &PopulationState, seed: u64) -> Result<SampleSet> {
    draw_with(ga, gb, state, seed, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Error and acceptance counts of one group at any threshold, where a user
/// is accepted when its feature is at least the threshold.
struct CountTable {
    sorted: Vec<f64>,
    /// Positives strictly below index `i` of `sorted`.
    pos_below: Vec<usize>,
    neg_below: Vec<usize>,
    negatives: usize,
    candidates: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Counts {
    errors: usize,
    accepted: usize,
    false_accepts: usize,
}

impl CountTable {
    fn new(group: &GroupSample) -> Self {
        let mut pts: Vec<(f64, Label)> = group.samples.iter().map(|s| (s.feature, s.label)).collect();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut pos_below = Vec::with_capacity(pts.len() + 1);
        let mut neg_below = Vec::with_capacity(pts.len() + 1);
        let (mut pos, mut neg) = (0, 0);
        pos_below.push(0);
        neg_below.push(0);
        for (_, label) in &pts {
            match label {
                Label::Positive => pos += 1,
                Label::Negative => neg += 1,
            }
            pos_below.push(pos);
            neg_below.push(neg);
        }
        let sorted: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let (lo, hi) = group.support;
        let mut candidates = vec![lo];
        candidates.extend(sorted.windows(2).filter(|w| w[1] > w[0]).map(|w| 0.5 * (w[0] + w[1])));
        candidates.push(hi);
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        Self {
            sorted,
            pos_below,
            neg_below,
            negatives: neg,
            candidates,
        }
    }

    fn len(&self) -> usize {
        self.sorted.len()
    }

    fn counts(&self, theta: f64) -> Counts {
        let i = self.sorted.partition_point(|&x| x < theta);
        let false_accepts = self.negatives - self.neg_below[i];
        Counts {
            errors: self.pos_below[i] + false_accepts,
            accepted: self.len() - i,
            false_accepts,
        }
    }

    fn loss(&self, c: &Counts) -> f64 {
        c.errors as f64 / self.len() as f64
    }

    /// Quantity the criterion equalizes across groups.
    fn key(&self, criterion: FairnessCriterion, c: &Counts) -> f64 {
        match criterion {
            FairnessCriterion::EqOpt if self.negatives == 0 => 0.0,
            FairnessCriterion::EqOpt => c.false_accepts as f64 / self.negatives as f64,
            FairnessCriterion::StatPar => c.accepted as f64 / self.len() as f64,
            _ => self.loss(c),
        }
    }

    /// Smallest gap between distinct attainable key values.
    fn key_resolution(&self, criterion: FairnessCriterion) -> f64 {
        match criterion {
            FairnessCriterion::EqOpt => 1.0 / self.negatives.max(1) as f64,
            _ => 1.0 / self.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    theta_a: f64,
    theta_b: f64,
    errors: usize,
    residual: f64,
}

/// Lower errors first, then smaller residual, then smaller `theta_b`.
fn better(x: &Choice, y: &Choice) -> bool {
    (x.errors, x.residual, x.theta_b) < (y.errors, y.residual, y.theta_b)
}

fn best_of(choices: impl IntoIterator<Item = Choice>) -> Choice {
    choices
        .into_iter()
        .reduce(|best, c| if better(&c, &best) { c } else { best })
        .expect("candidate set is never empty")
}

/// Threshold pair minimizing the misclassification count on the samples.
///
/// Each group is weighted by its sample count, so the objective is the
/// pooled error count. Constraints hold to the best resolution the samples
/// allow: for every `theta_b` the closest matching `theta_a` is taken, and
/// pairs whose mismatch exceeds that resolution are discarded.
pub fn empirical_one_shot(criterion: FairnessCriterion, samples: &SampleSet) -> Result<DecisionPair> {
    if samples.a.is_empty() {
        return Err(Error::EmptyGroup('a'));
    }
    if samples.b.is_empty() {
        return Err(Error::EmptyGroup('b'));
    }
    let ta = CountTable::new(&samples.a);
    let tb = CountTable::new(&samples.b);
    let choice = match criterion {
        FairnessCriterion::Simple | FairnessCriterion::MinMax => {
            let mut shared: Vec<f64> = ta.candidates.iter().chain(&tb.candidates).copied().collect();
            shared.sort_by(f64::total_cmp);
            shared.dedup();
            let minmax = criterion == FairnessCriterion::MinMax;
            let scored = shared.into_iter().map(|theta| {
                let (ca, cb) = (ta.counts(theta), tb.counts(theta));
                let errors = if minmax {
                    // Compare worse-group losses on a common integer scale.
                    (ca.errors * tb.len()).max(cb.errors * ta.len())
                } else {
                    ca.errors + cb.errors
                };
                Choice {
                    theta_a: theta,
                    theta_b: theta,
                    errors,
                    residual: 0.0,
                }
            });
            best_of(scored)
        }
        _ => {
            // Group a's attainable key values, each with its lowest-error threshold.
            let mut a_keys: Vec<(f64, usize, f64)> = ta
                .candidates
                .iter()
                .map(|&theta| {
                    let c = ta.counts(theta);
                    (ta.key(criterion, &c), c.errors, theta)
                })
                .collect();
            a_keys.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.total_cmp(&y.2)));
            a_keys.dedup_by(|later, first| later.0 == first.0);

            let per_b: Vec<Choice> = tb
                .candidates
                .iter()
                .map(|&theta_b| {
                    let cb = tb.counts(theta_b);
                    let key_b = tb.key(criterion, &cb);
                    let p = a_keys.partition_point(|k| k.0 < key_b);
                    let near = [p.checked_sub(1), (p < a_keys.len()).then_some(p)];
                    near.into_iter()
                        .flatten()
                        .map(|i| {
                            let (key_a, errors_a, theta_a) = a_keys[i];
                            Choice {
                                theta_a,
                                theta_b,
                                errors: errors_a + cb.errors,
                                residual: (key_a - key_b).abs(),
                            }
                        })
                        .reduce(|x, y| {
                            let key = |c: &Choice| (c.residual, c.errors, c.theta_a);
                            if key(&y) < key(&x) { y } else { x }
                        })
                        .expect("group a has at least two candidates")
                })
                .collect();
            let floor = per_b.iter().map(|c| c.residual).fold(f64::INFINITY, f64::min);
            let allowed = floor.max(ta.key_resolution(criterion)) + 1e-15;
            best_of(per_b.into_iter().filter(|c| c.residual <= allowed))
        }
    };
    Ok(DecisionPair {
        theta_a: choice.theta_a,
        theta_b: choice.theta_b,
        criterion,
        residual: choice.residual,
    })
}

/// Paired runs from the same initial state: population-optimal decisions
/// against decisions learned each step from the users present.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityOutcome {
    pub bayes: Trajectory,
    pub learned: Trajectory,
}

impl QualityOutcome {
    /// Group holding the smaller share at the end of the population-optimal run.
    pub fn disadvantaged_group(&self) -> char {
        match self.bayes.final_alpha_a() {
            Some(a) if a > 0.5 => 'b',
            _ => 'a',
        }
    }

    /// Per-step share of the disadvantaged group in the learned run minus the
    /// same share in the population-optimal run, from step `burn_in + 1` on.
    /// Steps after the learned run ended by extinction count as zero share.
    pub fn share_gaps(&self, burn_in: usize) -> Vec<(usize, f64)> {
        let share = |alpha_a: f64| if self.disadvantaged_group() == 'a' { alpha_a } else { 1.0 - alpha_a };
        self.bayes
            .records
            .iter()
            .filter(|r| r.t > burn_in)
            .map(|r| {
                let learned = self
                    .learned
                    .records
                    .get(r.t - 1)
                    .map(|l| share(l.alpha_a))
                    .unwrap_or(0.0);
                (r.t, learned - share(r.alpha_a))
            })
            .collect()
    }
}

/// Runs both decision modes for the full horizon.
///
/// Samples are drawn from a generator seeded with `seed`; the dynamics always
/// respond to the population losses of whichever thresholds were chosen.
pub fn quality_experiment(
    ga: &GroupSpec,
    gb: &GroupSpec,
    criterion: FairnessCriterion,
    model: &DynamicsModel,
    init: PopulationState,
    horizon: usize,
    seed: u64,
) -> Result<QualityOutcome> {
    // Run to the horizon so the two paths can be compared step by step.
    let conv = ConvergenceSpec {
        window: usize::MAX,
        ..ConvergenceSpec::default()
    };
    let decider = GreedyDecider::new(criterion, ga, gb)?;
    let bayes = simulate_with(ga, gb, model, init, horizon, &conv, |_, _, wa, wb, _, _| decider.decide(wa, wb))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let learned = simulate_with(ga, gb, model, init, horizon, &conv, |_, state, _, _, sa, sb| {
        let samples = draw_with(sa, sb, state, seed, &mut rng)?;
        empirical_one_shot(criterion, &samples)
    })?;
    Ok(QualityOutcome { bayes, learned })
}
