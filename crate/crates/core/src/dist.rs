//! Bounded-support feature densities for a single (group, label) subgroup.

use serde::{Deserialize, Serialize};
use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::numeric::linspace;

// Bracket width at which the quantile bisection stops; far below the
// 1e-12 probability resolution for the spreads used here.
const QUANTILE_X_TOL: f64 = 1e-14;
const ASSUMPTION_GRID: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistKind {
    Uniform,
    TruncatedNormal { mu: f64, sigma: f64 },
}

/// A density on `[lo, hi]`, either uniform or a normal renormalized to the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgroupDistribution {
    kind: DistKind,
    lo: f64,
    hi: f64,
    // Truncated normal only: standardized support ends and the support mass.
    z_lo: f64,
    z_hi: f64,
    mass: f64,
}

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[inline]
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

impl SubgroupDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(DistKind::Uniform, lo, hi)
    }

    pub fn truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::new(DistKind::TruncatedNormal { mu, sigma }, lo, hi)
    }

    pub fn new(kind: DistKind, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Structure(format!(
                "support must satisfy lo < hi with finite ends, got [{lo}, {hi}]"
            )));
        }
        match kind {
            DistKind::Uniform => Ok(Self {
                kind,
                lo,
                hi,
                z_lo: 0.0,
                z_hi: 0.0,
                mass: 1.0,
            }),
            DistKind::TruncatedNormal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::Structure(format!(
                        "truncated normal needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
                    )));
                }
                let z_lo = (lo - mu) / sigma;
                let z_hi = (hi - mu) / sigma;
                let mass = Self::normal_mass(z_lo, z_hi);
                if !(mass > 0.0) {
                    return Err(Error::Structure(format!(
                        "support [{lo}, {hi}] carries no normal mass for mu={mu}, sigma={sigma}"
                    )));
                }
                Ok(Self {
                    kind,
                    lo,
                    hi,
                    z_lo,
                    z_hi,
                    mass,
                })
            }
        }
    }

    // Differences of upper-tail probabilities keep precision when the whole
    // support sits above the mean.
    fn normal_mass(z_from: f64, z_to: f64) -> f64 {
        if z_from > 0.0 {
            std_normal_sf(z_from) - std_normal_sf(z_to)
        } else {
            std_normal_cdf(z_to) - std_normal_cdf(z_from)
        }
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, DistKind::Uniform)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(self.lo..=self.hi).contains(&x) {
            return 0.0;
        }
        match self.kind {
            DistKind::Uniform => 1.0 / (self.hi - self.lo),
            DistKind::TruncatedNormal { mu, sigma } => {
                std_normal_pdf((x - mu) / sigma) / (sigma * self.mass)
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let p = match self.kind {
            DistKind::Uniform => (x - self.lo) / (self.hi - self.lo),
            DistKind::TruncatedNormal { mu, sigma } => {
                Self::normal_mass(self.z_lo, (x - mu) / sigma) / self.mass
            }
        };
        p.clamp(0.0, 1.0)
    }

    /// `1 - cdf(x)`, computed directly so upper-tail values keep their precision.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 1.0;
        }
        if x >= self.hi {
            return 0.0;
        }
        let p = match self.kind {
            DistKind::Uniform => (self.hi - x) / (self.hi - self.lo),
            DistKind::TruncatedNormal { mu, sigma } => {
                Self::normal_mass((x - mu) / sigma, self.z_hi) / self.mass
            }
        };
        p.clamp(0.0, 1.0)
    }

    /// Smallest `x` with `cdf(x) >= p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("quantile level {p} outside [0, 1]")));
        }
        if p == 0.0 {
            return Ok(self.lo);
        }
        if p == 1.0 {
            return Ok(self.hi);
        }
        Ok(match self.kind {
            DistKind::Uniform => self.lo + p * (self.hi - self.lo),
            DistKind::TruncatedNormal { .. } => self.newton_quantile(p),
        })
    }
}

impl SubgroupDistribution {
    /// Newton steps on `cdf(x) - p`, kept inside a shrinking bracket and
    /// falling back to bisection whenever a step would leave it.
    fn newton_quantile(&self, p: f64) -> f64 {
        let (mut below, mut above) = (self.lo, self.hi);
        let mut x = self.lo + p * (self.hi - self.lo);
        for _ in 0..200 {
            let gap = self.cdf(x) - p;
            if gap >= 0.0 {
                above = x;
            } else {
                below = x;
            }
            let slope = self.pdf(x);
            let mut next = x - gap / slope;
            if !(next > below && next < above) {
                next = 0.5 * (below + above);
            }
            let done = (next - x).abs() <= QUANTILE_X_TOL || above - below <= QUANTILE_X_TOL;
            x = next;
            if done {
                break;
            }
        }
        x
    }
}

/// Outcome of the strict-monotonicity check on the overlap of the two label densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub holds: bool,
    pub positive_increasing: bool,
    pub negative_decreasing: bool,
    /// `[lo(f1), hi(f0)]`.
    pub overlap: (f64, f64),
}

/// Checks that `f1` is strictly increasing and `f0` strictly decreasing on their overlap.
pub fn check_assumption1(
    f0: &SubgroupDistribution,
    f1: &SubgroupDistribution,
) -> Result<AssumptionReport> {
    if !(f0.lo() < f1.lo() && f1.lo() < f0.hi() && f0.hi() < f1.hi()) {
        return Err(Error::Structure(format!(
            "supports must satisfy lo(f0) < lo(f1) < hi(f0) < hi(f1), got f0=[{}, {}], f1=[{}, {}]",
            f0.lo(),
            f0.hi(),
            f1.lo(),
            f1.hi()
        )));
    }
    let overlap = (f1.lo(), f0.hi());
    let grid = linspace(overlap.0, overlap.1, ASSUMPTION_GRID);
    let positive_increasing = grid.windows(2).all(|w| f1.pdf(w[1]) > f1.pdf(w[0]));
    let negative_decreasing = grid.windows(2).all(|w| f0.pdf(w[1]) < f0.pdf(w[0]));
    Ok(AssumptionReport {
        holds: positive_increasing && negative_decreasing,
        positive_increasing,
        negative_decreasing,
        overlap,
    })
}
