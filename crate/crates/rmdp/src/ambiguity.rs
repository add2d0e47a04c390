//! Worst-case expectations over divergence balls.
//!
//! For a nominal row `c` (a probability vector), a value vector `v`, and an
//! ambiguity ball `B = { p : D(p, c) <= radius }`, this module computes
//!
//! ```text
//! sigma_B(v) = inf_{p in B} p . v
//! ```
//!
//! together with an (epsilon-)attaining worst-case distribution and the dual
//! variable that certifies it. Three divergences are supported:
//!
//! - **Total variation** `D_tv = (1/2) * ||p - c||_1`: solved exactly by
//!   greedy mass transport — move up to `radius` of mass from the
//!   highest-value states onto the minimum-value state.
//! - **Chi-square** `D_chi = sum (p - c)^2 / c`: solved through the dual
//!   `max_{0 <= mu <= v} E_c[v - mu] - sqrt(radius * Var_c(v - mu))`, which
//!   reduces to a one-dimensional search over the threshold `omega` in
//!   `mu = (v - omega)_+`. The objective is concave on each segment between
//!   consecutive distinct values of `v`, so each segment is handled by
//!   ternary search and the best segment wins.
//! - **Kullback-Leibler** `D_kl = sum p log(p / c)`: solved through the
//!   one-dimensional concave dual
//!   `max_{lam > 0} -radius*lam - lam*log E_c[exp(-v/lam)]`, restricted to
//!   the support of `c` and shifted by `min v` for numerical stability. Any
//!   maximizer satisfies `lam <= span(v)/radius`, which bounds the search
//!   interval; the `lam -> 0` limit (the minimum of `v` on the support) wins
//!   exactly when the ball is wide enough to reach it.
//!
//! [`sigma_grid_oracle`] is a deliberately naive cross-check: exhaustive
//! search over a simplex grid, sharing no code with the fast paths above.

use crate::mdp::{Distribution, DistributionError};
use crate::par;
use thiserror::Error;

/// Iteration cap for every one-dimensional ternary search in this crate.
pub const TERNARY_MAX_ITERS: usize = 200;

/// Ternary search stops once the bracket width falls below
/// `TERNARY_WIDTH_TOL * (1 + initial width)`.
pub const TERNARY_WIDTH_TOL: f64 = 1e-12;

/// Which divergence a grid-oracle call should enforce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    Tv,
    Chi2,
    Kl,
}

/// The result of a worst-case expectation.
#[derive(Debug, Clone)]
pub struct SigmaResult {
    /// `inf_{p in B} p . v`.
    pub value: f64,
    /// A distribution that (epsilon-)attains the infimum within the ball.
    pub worst_case: Distribution,
    /// Divergence-specific certificate of the optimum.
    pub dual_info: DualInfo,
}

/// Dual variables reported alongside the optimum.
#[derive(Debug, Clone, PartialEq)]
pub enum DualInfo {
    /// Total probability mass the greedy transport moved.
    Tv { mass_moved: f64 },
    /// Optimal threshold in the chi-square dual `mu = (v - omega)_+`.
    Chi2 { omega: f64 },
    /// Optimal temperature of the KL dual; 0 when the `lam -> 0` limit
    /// (minimum of `v` on the support) is the optimum.
    Kl { lambda: f64 },
    /// Index of the minimizing model of a finite set.
    FiniteSet { model_index: usize },
    /// Plain expectation; no dual problem was solved.
    Expectation,
}

/// Input or shape problems for the sigma solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SigmaError {
    #[error("center and v have different lengths: {center_len} vs {v_len}")]
    LengthMismatch { center_len: usize, v_len: usize },
    #[error("center is not a probability vector: {0}")]
    BadCenter(#[from] DistributionError),
    #[error("v[{index}] is {value}, but values must be finite")]
    BadValue { index: usize, value: f64 },
    #[error("radius must be finite and >= 0, got {0}")]
    BadRadius(f64),
    #[error("the KL ball needs radius > 0; radius 0 is the plain expectation (sigma_kl_zero_radius)")]
    KlRadiusZero,
    #[error("finite set contains no models")]
    EmptyFiniteSet,
    #[error("finite-set row {model} has {len} entries, expected {expected}")]
    ModelShape { model: usize, len: usize, expected: usize },
    #[error("grid oracle supports 2..=4 states, got {0}")]
    OracleDim(usize),
    #[error("grid step must be in (0, 1], got {0}")]
    OracleStep(f64),
    #[error("grid oracle found no point within the divergence budget")]
    OracleInfeasible,
}

fn check_inputs(center: &[f64], v: &[f64], radius: f64) -> Result<(), SigmaError> {
    if center.len() != v.len() {
        return Err(SigmaError::LengthMismatch {
            center_len: center.len(),
            v_len: v.len(),
        });
    }
    Distribution::check(center)?;
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() {
            return Err(SigmaError::BadValue { index, value });
        }
    }
    if !radius.is_finite() || radius < 0.0 {
        return Err(SigmaError::BadRadius(radius));
    }
    Ok(())
}

/// Indices of the support of `center`, ascending.
fn support_of(center: &[f64]) -> Vec<u32> {
    (0..center.len())
        .filter(|&i| center[i] > 0.0)
        .map(|i| i as u32)
        .collect()
}

/// Plain dot product, accumulated in ascending index order.
///
/// Every expectation in the crate goes through this, so "no robustness" and
/// "radius-zero ball" produce bit-identical numbers.
#[inline]
pub(crate) fn dot(p: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), v.len());
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Dot product restricted to a support list (ascending indices).
///
/// Bit-identical to [`dot`] over the full slices when every skipped entry of
/// `p` is zero, because adding a zero term never changes an IEEE sum.
#[inline]
fn dot_on(support: &[u32], p: &[f64], v: &[f64]) -> f64 {
    support
        .iter()
        .map(|&i| p[i as usize] * v[i as usize])
        .sum()
}

/// Index of the minimum of `v`, ties broken toward the lowest index.
#[inline]
pub(crate) fn argmin_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Index of the maximum of `v`, ties broken toward the lowest index.
#[inline]
pub(crate) fn argmax_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Total-variation distance `(1/2) * ||p - q||_1`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Chi-square divergence `sum (p - c)^2 / c`; infinite when `p` puts mass
/// where `c` has none.
pub fn chi2_divergence(p: &[f64], center: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &ci) in p.iter().zip(center) {
        if ci > 0.0 {
            let d = pi - ci;
            total += d * d / ci;
        } else if pi > 0.0 {
            return f64::INFINITY;
        }
    }
    total
}

/// KL divergence `sum p log(p / c)`; infinite when `p` puts mass where `c`
/// has none.
pub fn kl_divergence(p: &[f64], center: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &ci) in p.iter().zip(center) {
        if pi > 0.0 {
            if ci > 0.0 {
                total += pi * (pi / ci).ln();
            } else {
                return f64::INFINITY;
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Total variation
// ---------------------------------------------------------------------------

/// Greedy transport: walk `donors` (sorted by descending `v`) moving mass
/// onto `receiver` until the `radius` budget or the useful donors run out.
/// Returns the (non-positive) change in expectation and reports each move.
fn tv_transport(
    center: &[f64],
    v: &[f64],
    radius: f64,
    receiver: usize,
    donors: &[u32],
    mut on_move: impl FnMut(usize, f64),
) -> f64 {
    let mut delta = 0.0;
    let mut remaining = radius;
    for &d in donors {
        let d = d as usize;
        if remaining <= 0.0 || v[d] <= v[receiver] {
            break;
        }
        let take = center[d].min(remaining);
        if take > 0.0 {
            delta -= take * (v[d] - v[receiver]);
            remaining -= take;
            on_move(d, take);
        }
    }
    delta
}

/// Fill `donors` with `support` minus `receiver`, sorted by descending `v`
/// (ties toward the lower index).
fn tv_donor_order(support: &[u32], v: &[f64], receiver: usize, donors: &mut Vec<u32>) {
    donors.clear();
    donors.extend(support.iter().copied().filter(|&i| i as usize != receiver));
    donors.sort_unstable_by(|&a, &b| {
        v[b as usize]
            .partial_cmp(&v[a as usize])
            .expect("values checked finite")
            .then(a.cmp(&b))
    });
}

/// Value-only worst case over a TV ball; the solver's inner loop.
///
/// `receiver` must be the lowest-index argmin of `v`, `support` the ascending
/// support of `center`, and `donors` a scratch vector reused across calls so
/// each backup stays allocation-free.
pub(crate) fn tv_value(
    center: &[f64],
    v: &[f64],
    radius: f64,
    receiver: usize,
    support: &[u32],
    donors: &mut Vec<u32>,
) -> f64 {
    let base = dot_on(support, center, v);
    tv_donor_order(support, v, receiver, donors);
    base + tv_transport(center, v, radius, receiver, donors, |_, _| {})
}

/// Worst-case expectation over a total-variation ball.
///
/// Exact greedy transport: mass moves from donors in descending order of
/// `v` onto the minimum-value state (ties broken toward the lowest index).
/// If `radius >= 1 - center(argmin v)` the infimum is `min v` itself.
pub fn sigma_tv(center: &[f64], v: &[f64], radius: f64) -> Result<SigmaResult, SigmaError> {
    check_inputs(center, v, radius)?;
    let receiver = argmin_index(v);
    let support = support_of(center);
    let base = dot_on(&support, center, v);
    let mut donors = Vec::new();
    tv_donor_order(&support, v, receiver, &mut donors);
    let mut p = center.to_vec();
    let mut moved = 0.0;
    let delta = tv_transport(center, v, radius, receiver, &donors, |d, take| {
        p[d] -= take;
        moved += take;
    });
    p[receiver] += moved;
    Ok(SigmaResult {
        value: base + delta,
        worst_case: Distribution::new(p).expect("transport preserves total mass"),
        dual_info: DualInfo::Tv { mass_moved: moved },
    })
}

// ---------------------------------------------------------------------------
// Chi-square
// ---------------------------------------------------------------------------

/// Maximize a function that is concave on `[lo, hi]`.
fn ternary_max(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let tol = TERNARY_WIDTH_TOL * (1.0 + (hi - lo));
    let mut iters = 0;
    while iters < TERNARY_MAX_ITERS && (hi - lo) > tol {
        let third = (hi - lo) / 3.0;
        let m1 = lo + third;
        let m2 = hi - third;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
        iters += 1;
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// How a chi-square / KL optimum was certified; drives witness recovery.
enum InnerOptimum {
    /// `v` is constant on the support: sigma is that constant, center is worst.
    ConstantValue,
    /// The ball reaches the minimum-value states: sigma = min v on support,
    /// worst case is the center conditioned on the argmin set.
    MinValueBranch,
    /// Interior dual optimum at the reported dual variable.
    Interior,
}

/// Center mass on the support states where `v` attains `v_min`.
fn argmin_mass(center: &[f64], v: &[f64], support: &[u32], v_min: f64) -> f64 {
    support
        .iter()
        .filter(|&&i| v[i as usize] == v_min)
        .map(|&i| center[i as usize])
        .sum()
}

struct Chi2Search {
    value: f64,
    omega: f64,
    optimum: InnerOptimum,
}

/// Shared chi-square dual search (value + threshold), no witness work.
fn chi2_search(center: &[f64], v: &[f64], radius: f64, support: &[u32]) -> Chi2Search {
    // Distinct values of v on the support, ascending.
    let mut vals: Vec<f64> = support.iter().map(|&i| v[i as usize]).collect();
    vals.sort_unstable_by(|a, b| a.partial_cmp(b).expect("values checked finite"));
    vals.dedup();
    let v_min = vals[0];
    if vals.len() == 1 {
        return Chi2Search { value: v_min, omega: v_min, optimum: InnerOptimum::ConstantValue };
    }

    // The infimum hits min v exactly when the center conditioned on the
    // argmin set fits in the ball; that conditional has divergence
    // (1 - cA)/cA for cA = center-mass of the argmin set.
    let c_argmin = argmin_mass(center, v, support, v_min);
    if (1.0 - c_argmin) / c_argmin <= radius * (1.0 + 1e-12) {
        return Chi2Search { value: v_min, omega: v_min, optimum: InnerOptimum::MinValueBranch };
    }

    // Dual objective at threshold omega, with w = min(v, omega):
    // f(omega) = E_c[w] - sqrt(radius * Var_c(w)); two-pass centered variance.
    let objective = |omega: f64| {
        let mut mean = 0.0;
        for &i in support {
            mean += center[i as usize] * v[i as usize].min(omega);
        }
        let mut var = 0.0;
        for &i in support {
            let d = v[i as usize].min(omega) - mean;
            var += center[i as usize] * d * d;
        }
        mean - (radius * var).sqrt()
    };

    // Concave per segment between consecutive distinct values: ternary-search
    // each segment, also probing the kinks themselves, and keep the best.
    let mut best_value = f64::NEG_INFINITY;
    let mut best_omega = v_min;
    let mut consider = |omega: f64, value: f64| {
        if value > best_value {
            best_value = value;
            best_omega = omega;
        }
    };
    for j in 0..vals.len() {
        consider(vals[j], objective(vals[j]));
        if j + 1 < vals.len() {
            let (omega, value) = ternary_max(vals[j], vals[j + 1], &objective);
            consider(omega, value);
        }
    }
    Chi2Search { value: best_value, omega: best_omega, optimum: InnerOptimum::Interior }
}

/// Value-only worst case over a chi-square ball; the solver's inner loop.
/// `support` must be the ascending support of `center`.
pub(crate) fn chi2_value(center: &[f64], v: &[f64], radius: f64, support: &[u32]) -> f64 {
    chi2_search(center, v, radius, support).value
}

/// Center conditioned on the support states where `v` attains `v_min`.
fn conditioned_on_argmin(center: &[f64], v: &[f64], support: &[u32], v_min: f64) -> Vec<f64> {
    let mass = argmin_mass(center, v, support, v_min);
    center
        .iter()
        .zip(v)
        .map(|(&c, &vi)| if c > 0.0 && vi == v_min { c / mass } else { 0.0 })
        .collect()
}

/// Worst-case expectation over a chi-square ball.
///
/// Dual: `max over 0 <= mu <= v` of `E_c[v - mu] - sqrt(radius * Var_c(v - mu))`,
/// searched over thresholds `mu = (v - omega)_+`. The worst case is recovered
/// from the KKT stationary distribution
/// `p = c * (1 - sqrt(radius / Var(w)) * (w - E[w]))` when the optimum is
/// interior, and from the argmin-conditioned center (or the center itself for
/// constant `v`) at the boundaries.
pub fn sigma_chi2(center: &[f64], v: &[f64], radius: f64) -> Result<SigmaResult, SigmaError> {
    check_inputs(center, v, radius)?;
    let support = support_of(center);
    let search = chi2_search(center, v, radius, &support);
    let worst = match search.optimum {
        InnerOptimum::ConstantValue => center.to_vec(),
        InnerOptimum::MinValueBranch => conditioned_on_argmin(center, v, &support, search.omega),
        InnerOptimum::Interior => {
            let omega = search.omega;
            let mut mean = 0.0;
            for &i in &support {
                mean += center[i as usize] * v[i as usize].min(omega);
            }
            let mut var = 0.0;
            for &i in &support {
                let d = v[i as usize].min(omega) - mean;
                var += center[i as usize] * d * d;
            }
            let scale = (radius / var).sqrt();
            let mut p: Vec<f64> = center
                .iter()
                .zip(v)
                .map(|(&c, &vi)| {
                    if c > 0.0 {
                        (c * (1.0 - scale * (vi.min(omega) - mean))).max(0.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = p.iter().sum();
            for x in &mut p {
                *x /= total;
            }
            p
        }
    };
    Ok(SigmaResult {
        value: search.value,
        worst_case: Distribution::new(worst).expect("witness is normalized"),
        dual_info: DualInfo::Chi2 { omega: search.omega },
    })
}

// ---------------------------------------------------------------------------
// Kullback-Leibler
// ---------------------------------------------------------------------------

struct KlSearch {
    value: f64,
    lambda: f64,
    v_min: f64,
    optimum: InnerOptimum,
}

/// Shared KL dual search.
///
/// Works on the support of the center with `v` shifted by its support
/// minimum, so the log-sum-exp is dominated by a term of exactly 1 and can
/// neither overflow nor vanish.
fn kl_search(center: &[f64], v: &[f64], radius: f64, support: &[u32]) -> KlSearch {
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for &i in support {
        v_min = v_min.min(v[i as usize]);
        v_max = v_max.max(v[i as usize]);
    }
    let span = v_max - v_min;
    if span == 0.0 {
        return KlSearch { value: v_min, lambda: 0.0, v_min, optimum: InnerOptimum::ConstantValue };
    }

    // The ball reaches min v exactly when the argmin-conditioned center fits:
    // its divergence is -log(cA).
    let c_argmin = argmin_mass(center, v, support, v_min);
    if -c_argmin.ln() <= radius * (1.0 + 1e-12) {
        return KlSearch { value: v_min, lambda: 0.0, v_min, optimum: InnerOptimum::MinValueBranch };
    }

    // Shifted dual: g(lam) = -radius*lam - lam * log E_c[exp(-(v - v_min)/lam)],
    // concave on (0, span/radius]; g -> 0 as lam -> 0.
    let g = |lam: f64| {
        let mut z = 0.0;
        for &i in support {
            z += center[i as usize] * (-(v[i as usize] - v_min) / lam).exp();
        }
        -radius * lam - lam * z.ln()
    };
    let (lambda, g_best) = ternary_max(0.0, span / radius, g);
    if g_best <= 0.0 {
        // Numerical tie with the lam -> 0 limit; fall back to min v.
        return KlSearch { value: v_min, lambda: 0.0, v_min, optimum: InnerOptimum::MinValueBranch };
    }
    KlSearch { value: v_min + g_best, lambda, v_min, optimum: InnerOptimum::Interior }
}

/// Value-only worst case over a KL ball; the solver's inner loop.
/// `support` must be the ascending support of `center`.
pub(crate) fn kl_value(center: &[f64], v: &[f64], radius: f64, support: &[u32]) -> f64 {
    kl_search(center, v, radius, support).value
}

/// Worst-case expectation over a KL ball (`radius > 0`).
///
/// One-dimensional concave dual over the temperature `lam`, restricted to the
/// center's support and compared against the `lam -> 0` limit (the support
/// minimum of `v`). The worst case is the exponential tilt
/// `p(s) ∝ center(s) * exp(-v(s)/lam*)` at an interior optimum, and the
/// argmin-conditioned center when the limit wins.
pub fn sigma_kl(center: &[f64], v: &[f64], radius: f64) -> Result<SigmaResult, SigmaError> {
    check_inputs(center, v, radius)?;
    if radius == 0.0 {
        return Err(SigmaError::KlRadiusZero);
    }
    let support = support_of(center);
    let search = kl_search(center, v, radius, &support);
    let worst = match search.optimum {
        InnerOptimum::ConstantValue => center.to_vec(),
        InnerOptimum::MinValueBranch => conditioned_on_argmin(center, v, &support, search.v_min),
        InnerOptimum::Interior => {
            let lam = search.lambda;
            let mut p: Vec<f64> = center
                .iter()
                .zip(v)
                .map(|(&c, &vi)| {
                    if c > 0.0 {
                        c * (-(vi - search.v_min) / lam).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = p.iter().sum();
            for x in &mut p {
                *x /= total;
            }
            p
        }
    };
    Ok(SigmaResult {
        value: search.value,
        worst_case: Distribution::new(worst).expect("witness is normalized"),
        dual_info: DualInfo::Kl { lambda: search.lambda },
    })
}

/// The KL ball degenerates to `{center}` at radius 0: plain expectation.
pub fn sigma_kl_zero_radius(center: &[f64], v: &[f64]) -> Result<SigmaResult, SigmaError> {
    check_inputs(center, v, 0.0)?;
    Ok(SigmaResult {
        value: dot(center, v),
        worst_case: Distribution::new(center.to_vec()).expect("center checked valid"),
        dual_info: DualInfo::Expectation,
    })
}

// ---------------------------------------------------------------------------
// Finite sets
// ---------------------------------------------------------------------------

/// Worst case over an explicit finite set of rows: the minimizing expectation,
/// ties broken toward the lowest model index.
pub fn sigma_finite_set<'a, I>(rows: I, v: &[f64]) -> Result<SigmaResult, SigmaError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut best: Option<(usize, f64, &[f64])> = None;
    for (index, row) in rows.into_iter().enumerate() {
        if row.len() != v.len() {
            return Err(SigmaError::ModelShape {
                model: index,
                len: row.len(),
                expected: v.len(),
            });
        }
        let value = dot(row, v);
        if best.map_or(true, |(_, b, _)| value < b) {
            best = Some((index, value, row));
        }
    }
    let (model_index, value, row) = best.ok_or(SigmaError::EmptyFiniteSet)?;
    Ok(SigmaResult {
        value,
        worst_case: Distribution::new(row.to_vec())?,
        dual_info: DualInfo::FiniteSet { model_index },
    })
}

// ---------------------------------------------------------------------------
// Grid oracle
// ---------------------------------------------------------------------------

/// Brute-force worst case over a simplex grid; the independent cross-check.
///
/// Enumerates every `p = (k_1/n, ..., k_S/n)` with `sum k_i = n = round(1/step)`
/// and minimizes `p . v` over the points whose divergence from the center is
/// at most `radius + step` (one step of boundary slack, so grid rounding of
/// the true optimizer cannot disqualify it). The result is within
/// `||v||_inf * |S| * step` of the true sigma, up to that slack.
///
/// Supports 2..=4 states; running time grows as `(1/step)^(|S|-1)`, so pick
/// the step to fit the dimension. Shares no code with the fast solvers.
pub fn sigma_grid_oracle(
    center: &[f64],
    v: &[f64],
    radius: f64,
    kind: Divergence,
    step: f64,
) -> Result<f64, SigmaError> {
    check_inputs(center, v, radius)?;
    let dim = center.len();
    if !(2..=4).contains(&dim) {
        return Err(SigmaError::OracleDim(dim));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(SigmaError::OracleStep(step));
    }
    let n = (1.0 / step).round().max(1.0) as u64;
    let h = 1.0 / n as f64;
    let budget = radius + step;

    // Per-point divergence terms, written out so the oracle stays independent
    // of the fast solvers. `k` is a grid numerator: the candidate puts mass
    // `k * h` on state `i`. KL uses a log table over the n+1 grid levels.
    let ln_table: Vec<f64> = if kind == Divergence::Kl {
        (0..=n).map(|k| ((k as f64) * h).ln()).collect()
    } else {
        Vec::new()
    };
    let ln_center: Vec<f64> = if kind == Divergence::Kl {
        center.iter().map(|&c| c.ln()).collect()
    } else {
        Vec::new()
    };

    let term = |k: u64, i: usize| -> f64 {
        let p = k as f64 * h;
        match kind {
            Divergence::Tv => 0.5 * (p - center[i]).abs(),
            Divergence::Chi2 => {
                if center[i] > 0.0 {
                    let d = p - center[i];
                    d * d / center[i]
                } else if k > 0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Divergence::Kl => {
                if k == 0 {
                    0.0
                } else {
                    // p * (ln p - ln c); +inf off the support since ln c = -inf.
                    p * (ln_table[k as usize] - ln_center[i])
                }
            }
        }
    };
    // The hot loops read memoized per-state term tables instead of
    // recomputing termwise divergences; same numbers, same addition order,
    // just without a branch on `kind` per grid point.
    let tables: Vec<Vec<f64>> =
        (0..dim).map(|i| (0..=n).map(|k| term(k, i)).collect()).collect();
    // Partial sums prune only points that cannot possibly be feasible:
    // `suffix[l]` is a lower bound on the sum of the terms for states l..,
    // zero for TV/chi-square (nonnegative terms) and `-sum c_i / e` for KL
    // (pointwise minimum of p ln(p/c)). Pruning never touches a feasible
    // point, so the reported minimum is unchanged.
    let mut suffix = vec![0.0; dim + 1];
    for l in (0..dim).rev() {
        let floor =
            if kind == Divergence::Kl { -center[l] / std::f64::consts::E } else { 0.0 };
        suffix[l] = suffix[l + 1] + floor;
    }

    // Parallel over the first coordinate; min is an order-independent fold.
    let best = par::fold_indexed(
        (n + 1) as usize,
        f64::INFINITY,
        |k1_idx| {
            let k1 = k1_idx as u64;
            let t1 = tables[0][k1_idx];
            if t1 + suffix[1] > budget {
                return f64::INFINITY;
            }
            let val1 = k1 as f64 * v[0];
            let mut local = f64::INFINITY;
            match dim {
                2 => {
                    let k2 = n - k1;
                    if t1 + tables[1][k2 as usize] <= budget {
                        local = (val1 + k2 as f64 * v[1]) * h;
                    }
                }
                3 => {
                    let m = (n - k1) as usize;
                    let t2s = &tables[1][..=m];
                    let t3s = &tables[2][..=m];
                    for (k2, &t2k) in t2s.iter().enumerate() {
                        let t2 = t1 + t2k;
                        if t2 + suffix[2] > budget {
                            continue;
                        }
                        let k3 = m - k2;
                        if t2 + t3s[k3] <= budget {
                            let val = (val1 + k2 as f64 * v[1] + k3 as f64 * v[2]) * h;
                            local = local.min(val);
                        }
                    }
                }
                _ => {
                    for k2 in 0..=(n - k1) as usize {
                        let t2 = t1 + tables[1][k2];
                        if t2 + suffix[2] > budget {
                            continue;
                        }
                        let m = (n - k1) as usize - k2;
                        let t3s = &tables[2][..=m];
                        let t4s = &tables[3][..=m];
                        for (k3, &t3k) in t3s.iter().enumerate() {
                            let t3 = t2 + t3k;
                            if t3 + suffix[3] > budget {
                                continue;
                            }
                            let k4 = m - k3;
                            if t3 + t4s[k4] <= budget {
                                let val = (val1
                                    + k2 as f64 * v[1]
                                    + k3 as f64 * v[2]
                                    + k4 as f64 * v[3])
                                    * h;
                                local = local.min(val);
                            }
                        }
                    }
                }
            }
            local
        },
        f64::min,
    );
    if best.is_finite() {
        Ok(best)
    } else {
        Err(SigmaError::OracleInfeasible)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CENTER: [f64; 2] = [0.5, 0.5];
    const V01: [f64; 2] = [0.0, 1.0];

    /// Second witness for sigma_tv: the mu-dual evaluated at threshold form
    /// mu = (v - omega)_+, which makes the dual objective piecewise linear in
    /// omega, so scanning the kinks (the distinct values of v) is exact.
    fn tv_mu_dual(center: &[f64], v: &[f64], radius: f64) -> f64 {
        let v_min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        v.iter()
            .map(|&omega| {
                let e: f64 = center.iter().zip(v).map(|(&c, &vi)| c * vi.min(omega)).sum();
                e - radius * (omega - v_min)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_result(r: &SigmaResult, center: &[f64], v: &[f64], radius: f64, kind: Divergence) {
        let div = match kind {
            Divergence::Tv => tv_distance(&r.worst_case, center),
            Divergence::Chi2 => chi2_divergence(&r.worst_case, center),
            Divergence::Kl => kl_divergence(&r.worst_case, center),
        };
        assert!(div <= radius + 1e-8, "witness divergence {div} > radius {radius}");
        let attained = dot(&r.worst_case, v);
        assert!(
            attained <= r.value + 1e-8,
            "witness attains {attained}, value is {}",
            r.value
        );
    }

    #[test]
    fn tv_moves_mass_to_the_minimum() {
        let r = sigma_tv(&CENTER, &V01, 0.2).unwrap();
        assert!((r.value - 0.3).abs() < 1e-15);
        assert!((r.worst_case[0] - 0.7).abs() < 1e-15);
        assert!((r.worst_case[1] - 0.3).abs() < 1e-15);
        assert_eq!(r.dual_info, DualInfo::Tv { mass_moved: 0.2 });
        check_result(&r, &CENTER, &V01, 0.2, Divergence::Tv);
    }

    #[test]
    fn tv_saturates_at_min_v() {
        // radius >= 1 - center(argmin v): everything piles onto the minimum.
        let r = sigma_tv(&CENTER, &V01, 0.6).unwrap();
        assert!((r.value - 0.0).abs() < 1e-12);
        assert!((r.worst_case[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tv_radius_zero_is_the_exact_dot() {
        let center = [0.2, 0.3, 0.5];
        let v = [1.5, -0.25, 0.125];
        let r = sigma_tv(&center, &v, 0.0).unwrap();
        assert_eq!(r.value, dot(&center, &v));
        assert_eq!(r.dual_info, DualInfo::Tv { mass_moved: 0.0 });
    }

    #[test]
    fn tv_receiver_tie_breaks_to_lowest_index() {
        // States 1 and 2 share the minimum; mass must land on state 1.
        let center = [0.6, 0.2, 0.2];
        let v = [1.0, 0.0, 0.0];
        let r = sigma_tv(&center, &v, 0.1).unwrap();
        assert!((r.worst_case[1] - 0.3).abs() < 1e-15);
        assert!((r.worst_case[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn tv_agrees_with_mu_dual_witness() {
        // Fuzz against the second witness from the dual formulation.
        let mut s = crate::rng::Stream::from_key(0x7f11);
        for _ in 0..500 {
            let n = 2 + s.next_index(5);
            let mut center: Vec<f64> = (0..n).map(|_| 0.05 + s.next_f64()).collect();
            let total: f64 = center.iter().sum();
            center.iter_mut().for_each(|c| *c /= total);
            let v: Vec<f64> = (0..n).map(|_| s.next_f64() * 4.0 - 1.0).collect();
            let radius = s.next_f64() * 1.2;
            let fast = sigma_tv(&center, &v, radius).unwrap().value;
            let dual = tv_mu_dual(&center, &v, radius);
            assert!(
                (fast - dual).abs() < 1e-10,
                "greedy {fast} vs mu-dual {dual} on center {center:?} v {v:?} radius {radius}"
            );
        }
    }

    #[test]
    fn chi2_matches_frozen_value() {
        // Independently derived: min p1 s.t. 4 (p1 - 1/2)^2 <= 1/2 is
        // 1/2 - sqrt(1/8) = 0.1464466094067262...
        let r = sigma_chi2(&CENTER, &V01, 0.5).unwrap();
        assert!((r.value - 0.146_446_609_406_726_2).abs() < 1e-10);
        match r.dual_info {
            DualInfo::Chi2 { omega } => assert!((omega - 1.0).abs() < 1e-6),
            ref other => panic!("expected chi2 dual info, got {other:?}"),
        }
        check_result(&r, &CENTER, &V01, 0.5, Divergence::Chi2);
    }

    #[test]
    fn chi2_huge_radius_reaches_support_minimum() {
        let center = [0.3, 0.7];
        let v = [2.0, 1.0];
        let r = sigma_chi2(&center, &v, 1e6).unwrap();
        assert_eq!(r.value, 1.0);
        check_result(&r, &center, &v, 1e6, Divergence::Chi2);
    }

    #[test]
    fn chi2_constant_v_returns_the_constant() {
        let center = [0.25, 0.5, 0.25];
        let v = [0.75, 0.75, 0.75];
        let r = sigma_chi2(&center, &v, 2.0).unwrap();
        assert_eq!(r.value, 0.75);
        assert_eq!(&*r.worst_case, &center);
    }

    #[test]
    fn chi2_radius_zero_is_the_exact_dot() {
        let center = [0.2, 0.3, 0.5];
        let v = [1.5, -0.25, 0.125];
        let r = sigma_chi2(&center, &v, 0.0).unwrap();
        assert_eq!(r.value, dot(&center, &v));
    }

    #[test]
    fn kl_matches_frozen_value() {
        // Independently derived by bisecting the primal constraint
        // t ln(2t) + (1-t) ln(2(1-t)) = 0.1: t = 0.28020537383859...
        let r = sigma_kl(&CENTER, &V01, 0.1).unwrap();
        assert!((r.value - 0.280_205_373_838_59).abs() < 1e-8);
        match r.dual_info {
            DualInfo::Kl { lambda } => assert!(lambda > 0.0),
            ref other => panic!("expected kl dual info, got {other:?}"),
        }
        check_result(&r, &CENTER, &V01, 0.1, Divergence::Kl);
    }

    #[test]
    fn kl_restricts_to_the_support() {
        // All center mass on state 0: the ball never leaves it.
        let r = sigma_kl(&[1.0, 0.0], &[2.0, 0.0], 5.0).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.worst_case[1], 0.0);
    }

    #[test]
    fn kl_zero_radius_is_the_expectation() {
        let center = [0.25, 0.75];
        let v = [3.0, -1.0];
        let r = sigma_kl_zero_radius(&center, &v).unwrap();
        assert_eq!(r.value, dot(&center, &v));
        assert_eq!(r.dual_info, DualInfo::Expectation);
        assert!(matches!(sigma_kl(&center, &v, 0.0), Err(SigmaError::KlRadiusZero)));
    }

    #[test]
    fn kl_large_radius_worst_case_spreads_over_tied_minima() {
        // Two tied minimum states: a point mass on either one would break
        // the budget, but the conditioned center fits.
        let center = [0.5, 0.25, 0.25];
        let v = [0.0, 0.0, 1.0];
        let radius = 0.3; // > -ln(0.75) = 0.2877, < -ln(0.25) = 1.386
        let r = sigma_kl(&center, &v, radius).unwrap();
        assert!((r.value - 0.0).abs() < 1e-9);
        check_result(&r, &center, &v, radius, Divergence::Kl);
    }

    #[test]
    fn finite_set_takes_the_minimizing_model() {
        let rows: [&[f64]; 3] = [&[0.5, 0.5], &[0.1, 0.9], &[0.9, 0.1]];
        let v = [0.0, 1.0];
        let r = sigma_finite_set(rows, &v).unwrap();
        assert_eq!(r.value, 0.1);
        assert_eq!(r.dual_info, DualInfo::FiniteSet { model_index: 2 });
        assert!(matches!(
            sigma_finite_set(std::iter::empty::<&[f64]>(), &v),
            Err(SigmaError::EmptyFiniteSet)
        ));
    }

    #[test]
    fn finite_set_tie_breaks_to_lowest_index() {
        let rows: [&[f64]; 2] = [&[0.5, 0.5], &[0.5, 0.5]];
        let r = sigma_finite_set(rows, &[0.0, 1.0]).unwrap();
        assert_eq!(r.dual_info, DualInfo::FiniteSet { model_index: 0 });
    }

    #[test]
    fn grid_oracle_brackets_each_solver() {
        let step = 1e-3;
        let tol = 1.0 * 2.0 * step + 5.0 * step; // ||v||inf * |S| * h + 5h
        let tv = sigma_grid_oracle(&CENTER, &V01, 0.2, Divergence::Tv, step).unwrap();
        assert!((tv - sigma_tv(&CENTER, &V01, 0.2).unwrap().value).abs() <= tol);
        let chi = sigma_grid_oracle(&CENTER, &V01, 0.5, Divergence::Chi2, step).unwrap();
        assert!((chi - sigma_chi2(&CENTER, &V01, 0.5).unwrap().value).abs() <= tol);
        let kl = sigma_grid_oracle(&CENTER, &V01, 0.1, Divergence::Kl, step).unwrap();
        assert!((kl - sigma_kl(&CENTER, &V01, 0.1).unwrap().value).abs() <= tol);
    }

    #[test]
    fn grid_oracle_rejects_large_dimensions() {
        let c = [0.2; 5];
        let v = [0.0; 5];
        assert!(matches!(
            sigma_grid_oracle(&c, &v, 0.1, Divergence::Tv, 0.01),
            Err(SigmaError::OracleDim(5))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(matches!(
            sigma_tv(&[0.5, 0.5], &[1.0], 0.1),
            Err(SigmaError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn invalid_center_is_reported() {
        assert!(matches!(
            sigma_tv(&[0.5, 0.4], &[0.0, 1.0], 0.1),
            Err(SigmaError::BadCenter(_))
        ));
    }

    #[test]
    fn negative_radius_is_reported() {
        assert!(matches!(
            sigma_kl(&CENTER, &V01, -0.5),
            Err(SigmaError::BadRadius(_))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn center_and_v(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (2..=max_len)
                .prop_flat_map(|n| {
                    (
                        proptest::collection::vec(0.05f64..1.0, n),
                        proptest::collection::vec(-2.0f64..2.0, n),
                    )
                })
                .prop_map(|(mut c, v)| {
                    let total: f64 = c.iter().sum();
                    c.iter_mut().for_each(|x| *x /= total);
                    (c, v)
                })
        }

        fn sigma(kind: Divergence, c: &[f64], v: &[f64], radius: f64) -> f64 {
            match kind {
                Divergence::Tv => sigma_tv(c, v, radius).unwrap().value,
                Divergence::Chi2 => sigma_chi2(c, v, radius).unwrap().value,
                Divergence::Kl => sigma_kl(c, v, radius).unwrap().value,
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn one_lipschitz_in_v(
                (c, v) in center_and_v(6),
                delta in proptest::collection::vec(-0.5f64..0.5, 6),
                radius in 0.01f64..1.0,
            ) {
                for kind in [Divergence::Tv, Divergence::Chi2, Divergence::Kl] {
                    let v2: Vec<f64> = v.iter().zip(&delta).map(|(a, b)| a + b).collect();
                    let gap: f64 = v.iter().zip(&v2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    let d = (sigma(kind, &c, &v, radius) - sigma(kind, &c, &v2, radius)).abs();
                    prop_assert!(d <= gap + 1e-9, "{kind:?}: |sigma(v1)-sigma(v2)| = {d} > {gap}");
                }
            }

            #[test]
            fn translation_equivariance(
                (c, v) in center_and_v(6),
                t in -3.0f64..3.0,
                radius in 0.01f64..1.0,
            ) {
                for kind in [Divergence::Tv, Divergence::Chi2, Divergence::Kl] {
                    let shifted: Vec<f64> = v.iter().map(|x| x + t).collect();
                    let lhs = sigma(kind, &c, &shifted, radius);
                    let rhs = sigma(kind, &c, &v, radius) + t;
                    prop_assert!((lhs - rhs).abs() <= 1e-8, "{kind:?}: {lhs} vs {rhs}");
                }
            }

            #[test]
            fn sandwiched_between_min_and_expectation(
                (c, v) in center_and_v(6),
                radius in 1e-9f64..1.5,
            ) {
                for kind in [Divergence::Tv, Divergence::Chi2, Divergence::Kl] {
                    let s = sigma(kind, &c, &v, radius);
                    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = dot(&c, &v);
                    prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9, "{kind:?}: {s} outside [{lo}, {hi}]");
                }
            }

            #[test]
            fn anti_monotone_in_radius(
                (c, v) in center_and_v(6),
                r1 in 0.01f64..0.7,
                bump in 0.0f64..0.7,
            ) {
                for kind in [Divergence::Tv, Divergence::Chi2, Divergence::Kl] {
                    let wide = sigma(kind, &c, &v, r1 + bump);
                    let narrow = sigma(kind, &c, &v, r1);
                    prop_assert!(wide <= narrow + 1e-9, "{kind:?}: sigma grew with the radius");
                }
            }
        }
    }
}
