use super::{map_slope_parts, FairnessCriterion};
use crate::error::{Error, Result};
use crate::popmodel::GroupSpec;

const KINK_CLEARANCE: f64 = 1e-9;

fn check_interior(name: char, g: &GroupSpec, theta: f64) -> Result<()> {
    let (lo, hi) = g.support();
    let near_kink = g.breakpoints().iter().any(|k| (theta - k).abs() <= KINK_CLEARANCE);
    if !(theta > lo && theta < hi) || near_kink {
        return Err(Error::Regime(format!(
            "theta_{name}={theta} is not strictly inside group {name}'s support away from its kinks"
        )));
    }
    Ok(())
}

/// First-order condition of the constrained one-shot problem, per unit of group b's weight.
///
/// Returns `ratio * L_a'(theta_a) * dtheta_a/dtheta_b + L_b'(theta_b)`, which
/// vanishes at an interior optimum and is positive where raising `theta_b`
/// along the constraint would increase the weighted loss.
pub fn stationarity_residual(
    criterion: FairnessCriterion,
    ga: &GroupSpec,
    gb: &GroupSpec,
    theta_a: f64,
    theta_b: f64,
    ratio: f64,
) -> Result<f64> {
    if !criterion.has_constraint_map() {
        return Err(Error::Regime(format!("{criterion} has no first-order condition along a constraint curve")));
    }
    check_interior('a', ga, theta_a)?;
    check_interior('b', gb, theta_b)?;
    let (num, den) = map_slope_parts(criterion, ga, gb, theta_a, theta_b);
    if den <= 0.0 {
        return Err(Error::Regime(format!("constraint map is flat at theta_a={theta_a}")));
    }
    Ok(ratio * ga.loss_slope(theta_a) * num / den + gb.loss_slope(theta_b))
}
