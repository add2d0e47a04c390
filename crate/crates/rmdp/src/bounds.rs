//! Sample-complexity calculators and the robustness-gap construction.
//!
//! The calculators evaluate closed-form sufficient sample sizes for learning
//! an epsilon-optimal robust policy from a generative model: draw `N` samples
//! per state-action pair, build the empirical kernel, and solve the robust
//! model around it with [`crate::robustdp::revi`] run for
//! [`revi_iterations`]-many backups. Each divergence has its own formula and
//! its own admissible accuracy range; inputs outside the ranges are errors,
//! not extrapolations. All logarithms are natural.
//!
//! The gap construction is the standard two-state, two-model example showing
//! why robustness matters: the nominal-optimal policy looks perfect on the
//! nominal kernel but loses `gamma / (99 (1 - gamma^2))` on the worst of two
//! kernels, while the robust-optimal policy loses nothing. [`gap_values`]
//! computes the gap numerically by policy enumeration and checks it against
//! the closed form before returning, so every call is self-verifying.

use crate::mdp::{AmbiguitySet, Kernel, TabularMdp};
use crate::robustdp::{self, SolveError};
use serde::Serialize;
use thiserror::Error;

/// Input problems for the calculators and the gap construction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("gamma must be in (0, 1), got {0}")]
    BadGamma(f64),
    #[error("gamma must be in (0.01, 1) for the gap construction, got {0}")]
    GapGamma(f64),
    #[error("epsilon {eps} is outside the admissible range (0, {max})")]
    BadEpsilon { eps: f64, max: f64 },
    #[error("delta must be in (0, 1), got {0}")]
    BadDelta(f64),
    #[error("state and action counts must be at least 1")]
    BadCounts,
    #[error("radius {0} is not admissible for this divergence")]
    BadRadius(f64),
    #[error("the minimal support probability must be in (0, 1], got {0}")]
    BadSupportFloor(f64),
    #[error("numeric gap {numeric} disagrees with the closed form {analytic}")]
    Inconsistent { numeric: f64, analytic: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

fn check_gamma(gamma: f64) -> Result<(), BoundsError> {
    if gamma.is_finite() && gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(BoundsError::BadGamma(gamma))
    }
}

fn check_eps(eps: f64, max: f64) -> Result<(), BoundsError> {
    if eps.is_finite() && eps > 0.0 && eps < max {
        Ok(())
    } else {
        Err(BoundsError::BadEpsilon { eps, max })
    }
}

fn check_delta(delta: f64) -> Result<(), BoundsError> {
    if delta.is_finite() && delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(BoundsError::BadDelta(delta))
    }
}

fn check_counts(num_states: usize, num_actions: usize) -> Result<(), BoundsError> {
    if num_states >= 1 && num_actions >= 1 {
        Ok(())
    } else {
        Err(BoundsError::BadCounts)
    }
}

/// Iterations sufficient for fixed-count value iteration to reach accuracy
/// `eps / 2` from `V = 0`:
///
/// ```text
/// K0(gamma, eps) = ln(8 gamma / (eps (1 - gamma)^2)) / ln(1 / gamma)
/// ```
///
/// The result can be zero or negative when `eps` is large — no backups are
/// needed — so callers should take `ceil(max(K0, 1))` for an iteration count.
pub fn revi_iterations(gamma: f64, eps: f64) -> Result<f64, BoundsError> {
    check_gamma(gamma)?;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(BoundsError::BadEpsilon { eps, max: f64::INFINITY });
    }
    Ok((8.0 * gamma / (eps * (1.0 - gamma).powi(2))).ln() / (1.0 / gamma).ln())
}

/// Per-pair generative samples sufficient for an `eps`-optimal robust policy
/// under total-variation balls, at confidence `1 - delta`:
///
/// ```text
/// N = 72 gamma^2 S / ((1-gamma)^4 eps^2)
///     * ln(144 gamma S A / (delta eps (1-gamma)^2))
/// ```
///
/// Admissible accuracy: `eps in (0, 24 gamma / (1 - gamma))`.
pub fn tv_sample_complexity(
    gamma: f64,
    eps: f64,
    delta: f64,
    num_states: usize,
    num_actions: usize,
) -> Result<f64, BoundsError> {
    check_gamma(gamma)?;
    check_eps(eps, 24.0 * gamma / (1.0 - gamma))?;
    check_delta(delta)?;
    check_counts(num_states, num_actions)?;
    let s = num_states as f64;
    let a = num_actions as f64;
    let one_minus = 1.0 - gamma;
    let lead = 72.0 * gamma * gamma * s / (one_minus.powi(4) * eps * eps);
    let log = (144.0 * gamma * s * a / (delta * eps * one_minus.powi(2))).ln();
    Ok(lead * log)
}

/// Per-pair generative samples sufficient for an `eps`-optimal robust policy
/// under chi-square balls of radius `radius`, at confidence `1 - delta`:
///
/// ```text
/// N = 64 gamma^2 (2 radius + 1) S / ((1-gamma)^4 eps^2)
///     * ln(192 S A gamma / (delta eps (1-gamma)^2))
/// ```
///
/// Admissible accuracy: `eps in (0, 16 gamma / (1 - gamma))`; any finite
/// `radius >= 0` is allowed.
pub fn chi2_sample_complexity(
    gamma: f64,
    eps: f64,
    delta: f64,
    num_states: usize,
    num_actions: usize,
    radius: f64,
) -> Result<f64, BoundsError> {
    check_gamma(gamma)?;
    check_eps(eps, 16.0 * gamma / (1.0 - gamma))?;
    check_delta(delta)?;
    check_counts(num_states, num_actions)?;
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(BoundsError::BadRadius(radius));
    }
    let s = num_states as f64;
    let a = num_actions as f64;
    let one_minus = 1.0 - gamma;
    let lead = 64.0 * gamma * gamma * (2.0 * radius + 1.0) * s / (one_minus.powi(4) * eps * eps);
    let log = (192.0 * s * a * gamma / (delta * eps * one_minus.powi(2))).ln();
    Ok(lead * log)
}

/// Per-pair generative samples sufficient for an `eps`-optimal robust policy
/// under KL balls of radius `radius`, at confidence `1 - delta`:
///
/// ```text
/// N = 8 gamma^2 S / (radius^2 (1-gamma)^4 eps^2)
///     * exp((2 lambda + 4) / (lambda (1-gamma)))
///     * ln(9 S A / (delta lambda (1-gamma)))
/// ```
///
/// `lambda` is the smallest nonzero transition probability of the nominal
/// kernel, in `(0, 1]`. Admissible accuracy: `eps in (0, 1 / (1 - gamma))`;
/// the radius must be positive. The exponential factor can overflow to
/// infinity for small `lambda (1 - gamma)`; that is the formula's honest
/// answer, not an error.
pub fn kl_sample_complexity(
    gamma: f64,
    eps: f64,
    delta: f64,
    num_states: usize,
    num_actions: usize,
    radius: f64,
    lambda: f64,
) -> Result<f64, BoundsError> {
    check_gamma(gamma)?;
    check_eps(eps, 1.0 / (1.0 - gamma))?;
    check_delta(delta)?;
    check_counts(num_states, num_actions)?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(BoundsError::BadRadius(radius));
    }
    if !(lambda.is_finite() && lambda > 0.0 && lambda <= 1.0) {
        return Err(BoundsError::BadSupportFloor(lambda));
    }
    let s = num_states as f64;
    let a = num_actions as f64;
    let one_minus = 1.0 - gamma;
    let lead = 8.0 * gamma * gamma * s / (radius * radius * one_minus.powi(4) * eps * eps);
    let amplifier = ((2.0 * lambda + 4.0) / (lambda * one_minus)).exp();
    let log = (9.0 * s * a / (delta * lambda * one_minus)).ln();
    Ok(lead * amplifier * log)
}

// ---------------------------------------------------------------------------
// The robustness gap
// ---------------------------------------------------------------------------

/// The two-state, two-model instance where ignoring ambiguity costs a
/// quantifiable amount.
///
/// States `{0, 1}` and actions `[al, ar]` everywhere. `al` moves to state 0
/// from either state and pays nothing. `ar` pays `-100 gamma / 99` at state 0
/// and `+1` at state 1; nominally it moves to state 1 from either state, but
/// the alternative kernel sends state 1 back to state 0 under `ar`. The
/// model set is `{nominal, alternative}` as whole kernels (deliberately not
/// row-rectangular).
#[derive(Debug, Clone)]
pub struct GapInstance {
    /// The nominal model (carrying rewards, discount, and the nominal kernel).
    pub mdp: TabularMdp,
    /// The alternative kernel; same shape as `mdp.kernel()`.
    pub alternative: Kernel,
}

/// What the gap works out to, numerically and in closed form.
///
/// `gap = robust_optimal_value - nominal_policy_value` at state 0, where the
/// nominal policy is greedy for the nominal model and both values take the
/// worst of the two kernels.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub gamma: f64,
    /// `max_pi min_model V(0)`; 0 by construction.
    pub robust_optimal_value: f64,
    /// `min_model V^{pi_nominal}(0)`, numerically.
    pub nominal_policy_value: f64,
    /// Closed form for the same quantity: `-gamma / (99 (1 - gamma^2))`.
    pub analytic_policy_value: f64,
    pub gap: f64,
    /// `gamma / (198 (1 - gamma))`, a convenient lower bound on the gap that
    /// makes its growth in `1 / (1 - gamma)` explicit.
    pub gap_lower_bound: f64,
}

/// Accuracy of the numeric solves inside [`gap_values`], and the tolerance
/// at which numeric and closed-form answers must agree.
pub const GAP_NUMERIC_TOL: f64 = 1e-9;

/// Build the gap instance for `gamma in (0.01, 1)`.
///
/// Below `gamma = 0.01` the risky action stops being nominal-optimal at
/// state 0 and the construction's premise breaks, so that range is rejected.
pub fn gap_instance(gamma: f64) -> Result<GapInstance, BoundsError> {
    if !(gamma.is_finite() && gamma > 0.01 && gamma < 1.0) {
        return Err(BoundsError::GapGamma(gamma));
    }
    let actions = vec![
        vec!["al".to_string(), "ar".to_string()],
        vec!["al".to_string(), "ar".to_string()],
    ];
    let rewards = vec![vec![0.0, -100.0 * gamma / 99.0], vec![0.0, 1.0]];
    let nominal: Kernel = vec![
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    ];
    let alternative: Kernel = vec![
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
    ];
    let mdp = TabularMdp::from_parts(gamma, actions, rewards, nominal, vec![])
        .expect("gap instance shapes are fixed");
    Ok(GapInstance { mdp, alternative })
}

/// Compute the robustness gap at `gamma`, checking numerics against the
/// closed form.
///
/// The model set has two whole kernels and the instance has two states and
/// two actions, so the four deterministic stationary policies can be
/// enumerated outright; the construction's analysis shows the max-min is
/// attained on them. Disagreement beyond [`GAP_NUMERIC_TOL`] is reported as
/// [`BoundsError::Inconsistent`] rather than silently returned.
pub fn gap_values(gamma: f64) -> Result<GapReport, BoundsError> {
    let GapInstance { mdp, alternative } = gap_instance(gamma)?;
    let alt_mdp = mdp.with_kernel(alternative).expect("alternative kernel matches");
    let eval = |model: &TabularMdp, policy: &[usize]| -> Result<f64, BoundsError> {
        let report = robustdp::robust_policy_evaluation(
            model,
            &AmbiguitySet::None,
            policy,
            GAP_NUMERIC_TOL,
            10_000_000,
        )?;
        Ok(report.values[0])
    };

    // Worst-of-two-models value of every deterministic stationary policy.
    let mut robust_optimal_value = f64::NEG_INFINITY;
    for a0 in 0..2 {
        for a1 in 0..2 {
            let policy = [a0, a1];
            let worst = eval(&mdp, &policy)?.min(eval(&alt_mdp, &policy)?);
            robust_optimal_value = robust_optimal_value.max(worst);
        }
    }

    // The nominal-greedy policy, then its worst-of-two-models value.
    let nominal_solve =
        robustdp::robust_value_iteration(&mdp, &AmbiguitySet::None, GAP_NUMERIC_TOL, 10_000_000)?;
    let nominal_policy_value =
        eval(&mdp, &nominal_solve.policy)?.min(eval(&alt_mdp, &nominal_solve.policy)?);

    let analytic_policy_value = -gamma / (99.0 * (1.0 - gamma * gamma));
    let gap = robust_optimal_value - nominal_policy_value;
    for (numeric, analytic) in [
        (robust_optimal_value, 0.0),
        (nominal_policy_value, analytic_policy_value),
    ] {
        if (numeric - analytic).abs() > GAP_NUMERIC_TOL {
            return Err(BoundsError::Inconsistent { numeric, analytic });
        }
    }
    Ok(GapReport {
        gamma,
        robust_optimal_value,
        nominal_policy_value,
        analytic_policy_value,
        gap,
        gap_lower_bound: gamma / (198.0 * (1.0 - gamma)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn revi_iterations_spot_values() {
        // K0(0.9, 0.1) = ln(8*0.9 / (0.1 * 0.01)) / ln(1/0.9)
        let k = revi_iterations(0.9, 0.1).unwrap();
        assert!(rel_err(k, 84.29947641723021) < 1e-12);
        let k2 = revi_iterations(0.5, 0.3).unwrap();
        assert!(rel_err(k2, 5.7369655941662066) < 1e-12);
    }

    #[test]
    fn revi_iterations_can_go_nonpositive() {
        // Huge eps: nothing to iterate for.
        let k = revi_iterations(0.5, 100.0).unwrap();
        assert!(k < 0.0);
    }

    #[test]
    fn tv_complexity_spot_value() {
        let n = tv_sample_complexity(0.9, 0.1, 0.1, 2, 2).unwrap();
        assert!(rel_err(n, 1803381247.984543) < 1e-12);
    }

    #[test]
    fn chi2_complexity_spot_value() {
        let n = chi2_sample_complexity(0.9, 0.1, 0.1, 2, 2, 0.5).unwrap();
        assert!(rel_err(n, 3265664862.071678) < 1e-12);
    }

    #[test]
    fn kl_complexity_spot_value() {
        let n = kl_sample_complexity(0.9, 0.5, 0.1, 2, 2, 0.1, 1.0).unwrap();
        assert!(rel_err(n, 4.847840146780916e34) < 1e-12);
    }

    #[test]
    fn accuracy_ranges_are_enforced() {
        // The bounds are open at the top; probe with the same float
        // expressions the implementations use, so equality is exact.
        let max_tv = 24.0 * 0.9 / (1.0 - 0.9);
        assert!(tv_sample_complexity(0.9, max_tv, 0.1, 2, 2).is_err());
        assert!(tv_sample_complexity(0.9, max_tv - 1.0, 0.1, 2, 2).is_ok());
        let max_chi = 16.0 * 0.9 / (1.0 - 0.9);
        assert!(chi2_sample_complexity(0.9, max_chi, 0.1, 2, 2, 0.5).is_err());
        let max_kl = 1.0 / (1.0 - 0.9);
        assert!(kl_sample_complexity(0.9, max_kl, 0.1, 2, 2, 0.1, 0.5).is_err());
        assert!(kl_sample_complexity(0.9, 9.9, 0.1, 2, 2, 0.1, 0.5).is_ok());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(revi_iterations(1.0, 0.1), Err(BoundsError::BadGamma(_))));
        assert!(matches!(revi_iterations(0.9, 0.0), Err(BoundsError::BadEpsilon { .. })));
        assert!(matches!(
            tv_sample_complexity(0.9, 0.1, 0.0, 2, 2),
            Err(BoundsError::BadDelta(_))
        ));
        assert!(matches!(
            tv_sample_complexity(0.9, 0.1, 0.1, 0, 2),
            Err(BoundsError::BadCounts)
        ));
        assert!(matches!(
            chi2_sample_complexity(0.9, 0.1, 0.1, 2, 2, -1.0),
            Err(BoundsError::BadRadius(_))
        ));
        assert!(matches!(
            kl_sample_complexity(0.9, 0.5, 0.1, 2, 2, 0.0, 0.5),
            Err(BoundsError::BadRadius(_))
        ));
        assert!(matches!(
            kl_sample_complexity(0.9, 0.5, 0.1, 2, 2, 0.1, 1.5),
            Err(BoundsError::BadSupportFloor(_))
        ));
    }

    #[test]
    fn complexity_grows_toward_the_horizon() {
        // Tighter discounting (gamma closer to 1) should only cost more.
        let lo = tv_sample_complexity(0.8, 0.1, 0.1, 4, 2).unwrap();
        let hi = tv_sample_complexity(0.95, 0.1, 0.1, 4, 2).unwrap();
        assert!(hi > lo);
        // And more accuracy should only cost more.
        let coarse = tv_sample_complexity(0.9, 0.5, 0.1, 4, 2).unwrap();
        let fine = tv_sample_complexity(0.9, 0.05, 0.1, 4, 2).unwrap();
        assert!(fine > coarse);
    }

    #[test]
    fn gap_matches_the_closed_form() {
        let report = gap_values(0.9).unwrap();
        assert!((report.robust_optimal_value - 0.0).abs() < 1e-9);
        assert!(
            (report.nominal_policy_value - (-0.047846889952153124)).abs() < 1e-9,
            "got {}",
            report.nominal_policy_value
        );
        assert!((report.gap - 0.047846889952153124).abs() < 2e-9);
        assert!((report.gap_lower_bound - 0.045454545454545456).abs() < 1e-12);
        assert!(report.gap >= report.gap_lower_bound);
    }

    #[test]
    fn gap_grows_with_the_horizon() {
        let g1 = gap_values(0.5).unwrap().gap;
        let g2 = gap_values(0.9).unwrap().gap;
        let g3 = gap_values(0.99).unwrap().gap;
        assert!(g1 < g2 && g2 < g3);
    }

    #[test]
    fn gap_rejects_out_of_range_gamma() {
        assert!(matches!(gap_instance(0.005), Err(BoundsError::GapGamma(_))));
        assert!(matches!(gap_instance(0.01), Err(BoundsError::GapGamma(_))));
        assert!(matches!(gap_instance(1.0), Err(BoundsError::GapGamma(_))));
    }

    #[test]
    fn gap_instance_is_a_valid_model() {
        let inst = gap_instance(0.7).unwrap();
        assert!(crate::mdp::validate_mdp(&inst.mdp).is_empty());
        let alt = inst.mdp.with_kernel(inst.alternative).unwrap();
        assert!(crate::mdp::validate_mdp(&alt).is_empty());
    }
}
