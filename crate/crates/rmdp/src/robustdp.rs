//! Robust dynamic programming: Bellman backups, value iteration, fixed-count
//! value iteration, and policy evaluation.
//!
//! The robust Bellman operator for an ambiguity set `B` built around the
//! nominal kernel is
//!
//! ```text
//! (T V)(s) = max_a [ r(s, a) + gamma * inf_{p in B(s, a)} p . V ]
//! ```
//!
//! a `gamma`-contraction in the sup norm for every set this crate supports,
//! so value iteration converges geometrically from any start. Sweeps are
//! Jacobi style — every state reads the frozen previous iterate — which makes
//! results bit-identical no matter how many worker threads run the sweep.
//!
//! Terminal states are pinned: their value is 0, their Q row is 0, and they
//! are never backed up. (Model validation already forces them to be absorbing
//! with zero reward; pinning keeps them at the fixpoint even when an
//! ambiguity ball around their self-loop row could leak mass elsewhere.)
//!
//! Solvers assume the model is valid — [`crate::load_mdp`] and
//! [`crate::validate_mdp`] are the boundary where invalid data is rejected.
//! Set-level inputs (radius, finite-set shapes) are checked here because they
//! arrive alongside the solve call.

use crate::ambiguity::{self, SigmaError};
use crate::mdp::{AmbiguitySet, Kernel, Policy, QFunction, TabularMdp, ValueFunction};
use crate::par;
use serde::Serialize;
use thiserror::Error;

/// Outcome of [`robust_value_iteration`] or [`revi`].
///
/// `values` and `q` form a consistent pair: `values[s]` is exactly
/// `max_a q[s][a]` from the final backup, and `policy` is greedy for `q`
/// (ties toward the lowest action index).
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub values: ValueFunction,
    pub q: QFunction,
    /// Greedy action indices; serialized as labels instead.
    #[serde(skip)]
    pub policy: Policy,
    /// Greedy action labels, one per state.
    #[serde(rename = "policy")]
    pub policy_labels: Vec<String>,
    /// Number of Bellman backups applied.
    pub iterations: usize,
    /// Sup-norm change of the final backup.
    pub residual: f64,
    /// Whether the stopping rule was met (always true for [`revi`], whose
    /// contract is the iteration count itself).
    pub converged: bool,
    /// Sup-norm change of every backup, in order.
    pub history: Vec<f64>,
}

/// Outcome of [`robust_policy_evaluation`].
#[derive(Debug, Clone, Serialize)]
pub struct PolicyEvalReport {
    pub values: ValueFunction,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Solve-time input problems.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("tolerance must be a positive finite number, got {0}")]
    BadTolerance(f64),
    #[error("iteration count must be at least 1")]
    BadIterations,
    #[error("value function has {len} entries, model has {expected} states")]
    ValueShape { len: usize, expected: usize },
    #[error("policy has {len} entries, model has {expected} states")]
    PolicyShape { len: usize, expected: usize },
    #[error("policy picks action {action} at state {state}, which has {available} actions")]
    PolicyAction { state: usize, action: usize, available: usize },
    #[error("finite-set model {model} does not match the nominal shape at state {state}: {detail}")]
    FiniteSetShape { model: usize, state: usize, detail: String },
    #[error(transparent)]
    Sigma(#[from] SigmaError),
}

/// Per-solve precomputation: the dispatch table for row backups.
///
/// Radius-0 balls of every divergence degenerate to the nominal row, so they
/// all route to the plain expectation — which also makes "no ambiguity" and
/// "radius-0 ball" bit-identical by construction.
enum SetCtx<'a> {
    Expectation,
    Tv { radius: f64, supports: Supports },
    Chi2 { radius: f64, supports: Supports },
    Kl { radius: f64, supports: Supports },
    Finite { models: &'a [Kernel] },
}

/// Ascending support indices of each nominal row, `supports[s][a]`.
type Supports = Vec<Vec<Vec<u32>>>;

fn row_supports(mdp: &TabularMdp) -> Supports {
    (0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions(s))
                .map(|a| {
                    mdp.kernel_row(s, a)
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(i, _)| i as u32)
                        .collect()
                })
                .collect()
        })
        .collect()
}

impl<'a> SetCtx<'a> {
    fn new(mdp: &TabularMdp, set: &'a AmbiguitySet) -> Result<Self, SolveError> {
        let check_radius = |radius: f64| -> Result<f64, SolveError> {
            if !radius.is_finite() || radius < 0.0 {
                Err(SigmaError::BadRadius(radius).into())
            } else {
                Ok(radius)
            }
        };
        Ok(match set {
            AmbiguitySet::None => SetCtx::Expectation,
            AmbiguitySet::Tv { radius } => {
                let radius = check_radius(*radius)?;
                if radius == 0.0 {
                    SetCtx::Expectation
                } else {
                    SetCtx::Tv { radius, supports: row_supports(mdp) }
                }
            }
            AmbiguitySet::Chi2 { radius } => {
                let radius = check_radius(*radius)?;
                if radius == 0.0 {
                    SetCtx::Expectation
                } else {
                    SetCtx::Chi2 { radius, supports: row_supports(mdp) }
                }
            }
            AmbiguitySet::Kl { radius } => {
                let radius = check_radius(*radius)?;
                if radius == 0.0 {
                    SetCtx::Expectation
                } else {
                    SetCtx::Kl { radius, supports: row_supports(mdp) }
                }
            }
            AmbiguitySet::FiniteSet { models } => {
                for (m, model) in models.iter().enumerate() {
                    check_model_shape(mdp, m, model)?;
                }
                SetCtx::Finite { models: models.as_slice() }
            }
        })
    }

    /// Whether sweeps need the global argmin of the value function.
    fn needs_receiver(&self) -> bool {
        matches!(self, SetCtx::Tv { .. })
    }

    /// Worst-case expectation of `v` for the row at `(s, a)`.
    ///
    /// `receiver` is the sweep-wide argmin of `v` (used by TV only) and
    /// `scratch` a reusable donor buffer so backups stay allocation-light.
    fn row_sigma(
        &self,
        mdp: &TabularMdp,
        s: usize,
        a: usize,
        v: &[f64],
        receiver: usize,
        scratch: &mut Vec<u32>,
    ) -> f64 {
        let row = mdp.kernel_row(s, a);
        match self {
            SetCtx::Expectation => ambiguity::dot(row, v),
            SetCtx::Tv { radius, supports } => {
                ambiguity::tv_value(row, v, *radius, receiver, &supports[s][a], scratch)
            }
            SetCtx::Chi2 { radius, supports } => {
                ambiguity::chi2_value(row, v, *radius, &supports[s][a])
            }
            SetCtx::Kl { radius, supports } => {
                ambiguity::kl_value(row, v, *radius, &supports[s][a])
            }
            SetCtx::Finite { models } => models
                .iter()
                .map(|model| ambiguity::dot(&model[s][a], v))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

fn check_model_shape(mdp: &TabularMdp, m: usize, model: &Kernel) -> Result<(), SolveError> {
    let shape_err = |state: usize, detail: String| SolveError::FiniteSetShape {
        model: m,
        state,
        detail,
    };
    if model.len() != mdp.num_states() {
        return Err(shape_err(0, format!("{} states, expected {}", model.len(), mdp.num_states())));
    }
    for (s, actions) in model.iter().enumerate() {
        if actions.len() != mdp.num_actions(s) {
            return Err(shape_err(
                s,
                format!("{} actions, expected {}", actions.len(), mdp.num_actions(s)),
            ));
        }
        for (a, row) in actions.iter().enumerate() {
            if row.len() != mdp.num_states() {
                return Err(shape_err(
                    s,
                    format!("action {a} row has {} entries, expected {}", row.len(), mdp.num_states()),
                ));
            }
            if let Err(e) = crate::mdp::Distribution::check(row) {
                return Err(shape_err(s, format!("action {a} row: {e}")));
            }
        }
    }
    Ok(())
}

/// One Jacobi value sweep: `v_new[s] = max_a [r + gamma * sigma]` from the
/// frozen `v_old`, terminals pinned at 0.
fn sweep_values(mdp: &TabularMdp, ctx: &SetCtx, v_old: &[f64], v_new: &mut [f64]) {
    let receiver = if ctx.needs_receiver() { ambiguity::argmin_index(v_old) } else { 0 };
    let gamma = mdp.gamma();
    par::for_each_mut(v_new, |s, slot| {
        if mdp.is_terminal(s) {
            *slot = 0.0;
            return;
        }
        let mut scratch = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for a in 0..mdp.num_actions(s) {
            let q = mdp.reward(s, a) + gamma * ctx.row_sigma(mdp, s, a, v_old, receiver, &mut scratch);
            if q > best {
                best = q;
            }
        }
        *slot = best;
    });
}

/// One full backup producing the Q function; terminal rows are all zero.
fn sweep_q(mdp: &TabularMdp, ctx: &SetCtx, v_old: &[f64]) -> QFunction {
    let receiver = if ctx.needs_receiver() { ambiguity::argmin_index(v_old) } else { 0 };
    let gamma = mdp.gamma();
    let mut q: QFunction = (0..mdp.num_states())
        .map(|s| vec![0.0; mdp.num_actions(s)])
        .collect();
    par::for_each_mut(&mut q, |s, row| {
        if mdp.is_terminal(s) {
            return;
        }
        let mut scratch = Vec::new();
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = mdp.reward(s, a) + gamma * ctx.row_sigma(mdp, s, a, v_old, receiver, &mut scratch);
        }
    });
    q
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Greedy action indices for a Q function, ties toward the lowest index.
pub fn greedy_policy(q: &QFunction) -> Policy {
    q.iter().map(|row| ambiguity::argmax_index(row)).collect()
}

fn check_value_shape(mdp: &TabularMdp, v: &[f64]) -> Result<(), SolveError> {
    if v.len() != mdp.num_states() {
        return Err(SolveError::ValueShape { len: v.len(), expected: mdp.num_states() });
    }
    Ok(())
}

/// Apply the robust Bellman operator once: returns `(T V, Q)` where
/// `Q(s, a) = r + gamma * sigma` and `(T V)(s) = max_a Q(s, a)`.
pub fn bellman_apply(
    mdp: &TabularMdp,
    set: &AmbiguitySet,
    v: &[f64],
) -> Result<(ValueFunction, QFunction), SolveError> {
    check_value_shape(mdp, v)?;
    let ctx = SetCtx::new(mdp, set)?;
    let q = sweep_q(mdp, &ctx, v);
    let values = q
        .iter()
        .enumerate()
        .map(|(s, row)| {
            if mdp.is_terminal(s) {
                0.0
            } else {
                row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    Ok((values, q))
}

fn finish_report(
    mdp: &TabularMdp,
    ctx: &SetCtx,
    v_final: &[f64],
    iterations: usize,
    residual: f64,
    converged: bool,
    history: Vec<f64>,
) -> SolveReport {
    let q = sweep_q(mdp, ctx, v_final);
    let values: ValueFunction = q
        .iter()
        .enumerate()
        .map(|(s, row)| {
            if mdp.is_terminal(s) {
                0.0
            } else {
                row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    let policy = greedy_policy(&q);
    let policy_labels = policy
        .iter()
        .enumerate()
        .map(|(s, &a)| mdp.action_labels(s)[a].clone())
        .collect();
    SolveReport { values, q, policy, policy_labels, iterations, residual, converged, history }
}

/// Robust value iteration to a sup-norm guarantee.
///
/// Sweeps until the residual `||V_k - V_{k-1}||_inf` drops to
/// `tol * (1 - gamma) / (2 gamma)`, which bounds `||V_k - V*||_inf` by
/// `tol / 2`, or until `max_iters` sweeps have run (`converged` reports
/// which). The returned `values`/`q` come from one final backup of the
/// accepted iterate, so the pair is internally consistent.
pub fn robust_value_iteration(
    mdp: &TabularMdp,
    set: &AmbiguitySet,
    tol: f64,
    max_iters: usize,
) -> Result<SolveReport, SolveError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(SolveError::BadTolerance(tol));
    }
    if max_iters == 0 {
        return Err(SolveError::BadIterations);
    }
    let ctx = SetCtx::new(mdp, set)?;
    let gamma = mdp.gamma();
    let threshold = tol * (1.0 - gamma) / (2.0 * gamma);

    let n = mdp.num_states();
    let mut v_old: ValueFunction = vec![0.0; n];
    let mut v_new: ValueFunction = vec![0.0; n];
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        sweep_values(mdp, &ctx, &v_old, &mut v_new);
        residual = sup_distance(&v_new, &v_old);
        history.push(residual);
        iterations += 1;
        std::mem::swap(&mut v_old, &mut v_new);
        if residual <= threshold {
            converged = true;
            break;
        }
    }
    Ok(finish_report(mdp, &ctx, &v_old, iterations, residual, converged, history))
}

/// Value iteration for an exact number of backups, starting from `V = 0`.
///
/// Runs the robust backup exactly `iterations` times and reports `Q_K` (the
/// Q function of the final backup), its value function, and its greedy
/// policy. There is no stopping rule: the accuracy guarantee comes from the
/// iteration count (see [`crate::bounds::revi_iterations`]), so `converged`
/// is always true.
pub fn revi(
    mdp: &TabularMdp,
    set: &AmbiguitySet,
    iterations: usize,
) -> Result<SolveReport, SolveError> {
    if iterations == 0 {
        return Err(SolveError::BadIterations);
    }
    let ctx = SetCtx::new(mdp, set)?;
    let n = mdp.num_states();
    let mut v_old: ValueFunction = vec![0.0; n];
    let mut v_new: ValueFunction = vec![0.0; n];
    let mut history = Vec::new();
    // K - 1 value sweeps; the final report backup is the K-th application.
    for _ in 1..iterations {
        sweep_values(mdp, &ctx, &v_old, &mut v_new);
        history.push(sup_distance(&v_new, &v_old));
        std::mem::swap(&mut v_old, &mut v_new);
    }
    let report = finish_report(mdp, &ctx, &v_old, iterations, 0.0, true, history);
    let mut report = report;
    report.residual = sup_distance(&report.values, &v_old);
    report.history.push(report.residual);
    Ok(report)
}

/// Worst-case evaluation of a fixed policy over the same ambiguity set.
///
/// Iterates `V(s) <- r(s, pi(s)) + gamma * sigma_{B(s, pi(s))}(V)` with the
/// same stopping rule as [`robust_value_iteration`]. With
/// [`AmbiguitySet::None`] this is plain policy evaluation on the nominal
/// model; combine with [`TabularMdp::with_kernel`] to evaluate a policy under
/// any explicit alternative kernel.
pub fn robust_policy_evaluation(
    mdp: &TabularMdp,
    set: &AmbiguitySet,
    policy: &[usize],
    tol: f64,
    max_iters: usize,
) -> Result<PolicyEvalReport, SolveError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(SolveError::BadTolerance(tol));
    }
    if max_iters == 0 {
        return Err(SolveError::BadIterations);
    }
    if policy.len() != mdp.num_states() {
        return Err(SolveError::PolicyShape { len: policy.len(), expected: mdp.num_states() });
    }
    for (state, &action) in policy.iter().enumerate() {
        if action >= mdp.num_actions(state) {
            return Err(SolveError::PolicyAction {
                state,
                action,
                available: mdp.num_actions(state),
            });
        }
    }
    let ctx = SetCtx::new(mdp, set)?;
    let gamma = mdp.gamma();
    let threshold = tol * (1.0 - gamma) / (2.0 * gamma);

    let n = mdp.num_states();
    let mut v_old: ValueFunction = vec![0.0; n];
    let mut v_new: ValueFunction = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let receiver = if ctx.needs_receiver() { ambiguity::argmin_index(&v_old) } else { 0 };
        {
            let v_ref = &v_old;
            let ctx_ref = &ctx;
            par::for_each_mut(&mut v_new, |s, slot| {
                if mdp.is_terminal(s) {
                    *slot = 0.0;
                    return;
                }
                let mut scratch = Vec::new();
                let a = policy[s];
                *slot = mdp.reward(s, a)
                    + gamma * ctx_ref.row_sigma(mdp, s, a, v_ref, receiver, &mut scratch);
            });
        }
        residual = sup_distance(&v_new, &v_old);
        iterations += 1;
        std::mem::swap(&mut v_old, &mut v_new);
        if residual <= threshold {
            converged = true;
            break;
        }
    }
    Ok(PolicyEvalReport { values: v_old, iterations, residual, converged })
}
