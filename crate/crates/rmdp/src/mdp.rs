//! Tabular MDP model, validation, and the on-disk JSON format.
//!
//! A [`TabularMdp`] holds a finite state space `0..num_states`, a per-state
//! list of labelled actions, deterministic state-action rewards, a nominal
//! transition kernel `P(s' | s, a)`, a discount `gamma in (0, 1)`, and a set
//! of terminal states. Terminal states are absorbing: every admissible action
//! self-loops with reward 0, and solvers pin their value to 0.
//!
//! Validation is data, not control flow: [`validate_mdp`] returns the full
//! list of [`Violation`]s so a caller (or the CLI) can report every problem in
//! a file at once. Constructors only enforce *structural* consistency — array
//! lengths that must line up for indexing to be meaningful at all. Numeric
//! validity (row sums, probability signs, gamma range, absorbing terminals)
//! is checked at the boundary by [`load_mdp`] and by callers that build
//! models from untrusted data.
//!
//! The file format is a single JSON object, `transitions[s][a][s']`:
//!
//! ```json
//! { "gamma": 0.9,
//!   "num_states": 2,
//!   "actions": [["al","ar"],["al","ar"]],
//!   "rewards": [[0.0, -0.90909], [0.0, 1.0]],
//!   "transitions": [ [ [1.0,0.0],[0.0,1.0] ], [ [1.0,0.0],[0.0,1.0] ] ],
//!   "terminal": [] }
//! ```
//!
//! Probabilities round-trip at full precision (serde_json emits the shortest
//! decimal that parses back to the same f64), and rewards may be negative or
//! exceed 1; `reward_bound` tracks the actual bound in use.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Sum tolerance for a probability vector: entries must total 1 within this.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A value function: one real per state.
pub type ValueFunction = Vec<f64>;

/// A Q-function: `q[s][a]` for each admissible action, ragged across states.
pub type QFunction = Vec<Vec<f64>>;

/// A deterministic policy: the admissible-action *index* chosen at each state.
pub type Policy = Vec<usize>;

/// A transition kernel: `kernel[s][a][s']`, same shape as the MDP's nominal.
pub type Kernel = Vec<Vec<Vec<f64>>>;

/// A validated probability vector.
///
/// Construction checks non-negativity and that entries sum to 1 within
/// [`ROW_SUM_TOL`]. Inputs are stored exactly as given — there is no silent
/// renormalization; a row that fails the check is the caller's bug to fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

/// Why a probability vector was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("probability vector is empty")]
    Empty,
    #[error("entry {index} is {value}, but probabilities must be finite and >= 0")]
    BadEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, which is off 1 by more than {ROW_SUM_TOL}")]
    SumOffOne { sum: f64 },
}

impl Distribution {
    /// Validate and wrap a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        Self::check(&probs)?;
        Ok(Distribution(probs))
    }

    /// Check a slice against the probability-vector rules without wrapping
    /// it: nonempty, entries finite and nonnegative, sum within
    /// [`ROW_SUM_TOL`] of one.
    pub fn check(probs: &[f64]) -> Result<(), DistributionError> {
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DistributionError::BadEntry { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(DistributionError::SumOffOne { sum });
        }
        Ok(())
    }

    /// The probabilities as a slice.
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Move the probabilities back out.
    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for Distribution {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = DistributionError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Distribution::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Vec<f64> {
        d.0
    }
}

/// The ambiguity set attached to each state-action row.
///
/// All four divergence-ball kinds are (s,a)-rectangular: the worst case is
/// taken independently per row around the nominal row. `None` is the ordinary
/// non-robust backup and behaves identically to `Tv { radius: 0.0 }`.
#[derive(Debug, Clone, PartialEq)]
pub enum AmbiguitySet {
    /// No robustness: expectation under the nominal row.
    None,
    /// Total-variation ball: `(1/2) * l1-distance <= radius`.
    Tv { radius: f64 },
    /// Chi-square ball: `sum (p - p_o)^2 / p_o <= radius`.
    Chi2 { radius: f64 },
    /// KL ball: `sum p log(p / p_o) <= radius`.
    Kl { radius: f64 },
    /// An explicit finite set of kernels; the backup takes the row-wise
    /// minimum across them (the rectangularization of the set).
    FiniteSet { models: Vec<Kernel> },
}

impl AmbiguitySet {
    /// The ball radius, with `None` reading as radius 0 and finite sets as 0.
    pub fn radius(&self) -> f64 {
        match self {
            AmbiguitySet::None | AmbiguitySet::FiniteSet { .. } => 0.0,
            AmbiguitySet::Tv { radius }
            | AmbiguitySet::Chi2 { radius }
            | AmbiguitySet::Kl { radius } => *radius,
        }
    }

    /// Short lowercase tag used in CSV records and CLI arguments.
    pub fn tag(&self) -> &'static str {
        match self {
            AmbiguitySet::None => "none",
            AmbiguitySet::Tv { .. } => "tv",
            AmbiguitySet::Chi2 { .. } => "chi2",
            AmbiguitySet::Kl { .. } => "kl",
            AmbiguitySet::FiniteSet { .. } => "finite_set",
        }
    }
}

/// A single defect found by [`validate_mdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    GammaOutOfRange { gamma: f64 },
    EmptyActionSet { state: usize },
    NonFiniteReward { state: usize, action: usize, value: f64 },
    NegativeProbability { state: usize, action: usize, next: usize, value: f64 },
    NonFiniteProbability { state: usize, action: usize, next: usize, value: f64 },
    RowSumOffOne { state: usize, action: usize, sum: f64 },
    TerminalOutOfRange { state: usize },
    TerminalNotAbsorbing { state: usize, action: usize },
    TerminalRewardNonzero { state: usize, action: usize, reward: f64 },
    RewardBoundExceeded { state: usize, action: usize, reward: f64, bound: f64 },
    RewardBoundNotFinite { bound: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use Violation::*;
        match self {
            GammaOutOfRange { gamma } => {
                write!(f, "gamma out of range: {gamma} is not in the open interval (0, 1)")
            }
            EmptyActionSet { state } => write!(f, "state {state} has an empty action set"),
            NonFiniteReward { state, action, value } => {
                write!(f, "reward at (s={state}, a={action}) is not finite: {value}")
            }
            NegativeProbability { state, action, next, value } => write!(
                f,
                "transition probability at (s={state}, a={action}, s'={next}) is negative: {value}"
            ),
            NonFiniteProbability { state, action, next, value } => write!(
                f,
                "transition probability at (s={state}, a={action}, s'={next}) is not finite: {value}"
            ),
            RowSumOffOne { state, action, sum } => write!(
                f,
                "kernel row at (s={state}, a={action}) sums to {sum}, off 1 by more than {ROW_SUM_TOL}"
            ),
            TerminalOutOfRange { state } => {
                write!(f, "terminal list names state {state}, which does not exist")
            }
            TerminalNotAbsorbing { state, action } => write!(
                f,
                "terminal state {state} is not absorbing under action {action} (self-loop probability != 1)"
            ),
            TerminalRewardNonzero { state, action, reward } => write!(
                f,
                "terminal state {state} has nonzero reward {reward} under action {action}"
            ),
            RewardBoundExceeded { state, action, reward, bound } => write!(
                f,
                "reward {reward} at (s={state}, a={action}) exceeds the declared reward_bound {bound}"
            ),
            RewardBoundNotFinite { bound } => {
                write!(f, "declared reward_bound is not finite: {bound}")
            }
        }
    }
}

/// Errors from constructing, loading, or saving a model.
#[derive(Debug, Error)]
pub enum MdpError {
    #[error("structural mismatch: {0}")]
    Shape(String),
    #[error("model failed validation with {} violation(s):\n{}", .0.len(), format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("could not parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn format_violations(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A finite tabular MDP with a nominal transition kernel.
///
/// Fields are private; accessors hand out slices so solver loops can index
/// without copying. Use [`TabularMdp::from_parts`] (structural checks only)
/// or [`load_mdp`] (structural + numeric validation) to build one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct TabularMdp {
    gamma: f64,
    num_states: usize,
    actions: Vec<Vec<String>>,
    rewards: Vec<Vec<f64>>,
    transitions: Kernel,
    terminal: Vec<usize>,
    reward_bound: Option<f64>,
}

/// Serialized form; identical fields, kept separate so the on-disk layout is
/// explicit and unknown fields are rejected with a clear parse error.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    gamma: f64,
    num_states: usize,
    actions: Vec<Vec<String>>,
    rewards: Vec<Vec<f64>>,
    transitions: Kernel,
    terminal: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward_bound: Option<f64>,
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = MdpError;
    fn try_from(f: MdpFile) -> Result<Self, MdpError> {
        TabularMdp::from_parts_with_bound(
            f.gamma,
            f.num_states,
            f.actions,
            f.rewards,
            f.transitions,
            f.terminal,
            f.reward_bound,
        )
    }
}

impl From<TabularMdp> for MdpFile {
    fn from(m: TabularMdp) -> MdpFile {
        MdpFile {
            gamma: m.gamma,
            num_states: m.num_states,
            actions: m.actions,
            rewards: m.rewards,
            transitions: m.transitions,
            terminal: m.terminal,
            reward_bound: m.reward_bound,
        }
    }
}

impl TabularMdp {
    /// Build a model, checking only that array shapes line up.
    ///
    /// Numeric validity (gamma range, row sums, absorbing terminals, ...) is
    /// deliberately *not* enforced here — run [`validate_mdp`] to collect
    /// violations as data, as `load_mdp` does. `num_states` is taken from the
    /// shape of `transitions` rows.
    pub fn from_parts(
        gamma: f64,
        actions: Vec<Vec<String>>,
        rewards: Vec<Vec<f64>>,
        transitions: Kernel,
        terminal: Vec<usize>,
    ) -> Result<Self, MdpError> {
        let num_states = actions.len();
        TabularMdp::from_parts_with_bound(gamma, num_states, actions, rewards, transitions, terminal, None)
    }

    /// [`TabularMdp::from_parts`] with an explicit reward bound override.
    pub fn from_parts_with_bound(
        gamma: f64,
        num_states: usize,
        actions: Vec<Vec<String>>,
        rewards: Vec<Vec<f64>>,
        transitions: Kernel,
        mut terminal: Vec<usize>,
        reward_bound: Option<f64>,
    ) -> Result<Self, MdpError> {
        if actions.len() != num_states {
            return Err(MdpError::Shape(format!(
                "num_states is {num_states} but actions lists {} states",
                actions.len()
            )));
        }
        if rewards.len() != num_states || transitions.len() != num_states {
            return Err(MdpError::Shape(format!(
                "num_states is {num_states} but rewards lists {} states and transitions {}",
                rewards.len(),
                transitions.len()
            )));
        }
        for s in 0..num_states {
            let n_actions = actions[s].len();
            if rewards[s].len() != n_actions || transitions[s].len() != n_actions {
                return Err(MdpError::Shape(format!(
                    "state {s} has {n_actions} actions but {} rewards and {} kernel rows",
                    rewards[s].len(),
                    transitions[s].len()
                )));
            }
            for (a, row) in transitions[s].iter().enumerate() {
                if row.len() != num_states {
                    return Err(MdpError::Shape(format!(
                        "kernel row at (s={s}, a={a}) has {} entries, expected num_states = {num_states}",
                        row.len()
                    )));
                }
            }
        }
        terminal.sort_unstable();
        terminal.dedup();
        Ok(TabularMdp {
            gamma,
            num_states,
            actions,
            rewards,
            transitions,
            terminal,
            reward_bound,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Number of admissible actions at `s`.
    pub fn num_actions(&self, s: usize) -> usize {
        self.actions[s].len()
    }

    /// Labels of the admissible actions at `s`, in index order.
    pub fn action_labels(&self, s: usize) -> &[String] {
        &self.actions[s]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    /// The nominal kernel row `P(. | s, a)`.
    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[s][a]
    }

    /// The full nominal kernel, `[s][a][s']`.
    pub fn kernel(&self) -> &Kernel {
        &self.transitions
    }

    /// Sorted list of terminal states.
    pub fn terminal_states(&self) -> &[usize] {
        &self.terminal
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal.binary_search(&s).is_ok()
    }

    /// The reward bound in force: the declared override if present, else the
    /// largest `|r(s,a)|` in the table (0 for a model with no actions).
    pub fn reward_bound(&self) -> f64 {
        self.reward_bound.unwrap_or_else(|| {
            self.rewards
                .iter()
                .flatten()
                .map(|r| r.abs())
                .fold(0.0, f64::max)
        })
    }

    /// Replace the nominal kernel, keeping everything else.
    ///
    /// Shape-checked like `from_parts`; used for evaluating a policy under an
    /// alternative model.
    pub fn with_kernel(&self, kernel: Kernel) -> Result<TabularMdp, MdpError> {
        TabularMdp::from_parts_with_bound(
            self.gamma,
            self.num_states,
            self.actions.clone(),
            self.rewards.clone(),
            kernel,
            self.terminal.clone(),
            self.reward_bound,
        )
    }
}

/// Collect every defect in the model. An empty list means the model is valid.
///
/// Pure: nothing is mutated, nothing is renormalized, and all violations are
/// reported (not just the first), so a bad file produces one complete
/// diagnosis.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) || !mdp.gamma.is_finite() {
        out.push(Violation::GammaOutOfRange { gamma: mdp.gamma });
    }
    if let Some(bound) = mdp.reward_bound {
        if !bound.is_finite() {
            out.push(Violation::RewardBoundNotFinite { bound });
        }
    }
    for s in 0..mdp.num_states {
        if mdp.actions[s].is_empty() {
            out.push(Violation::EmptyActionSet { state: s });
        }
        for a in 0..mdp.actions[s].len() {
            let r = mdp.rewards[s][a];
            if !r.is_finite() {
                out.push(Violation::NonFiniteReward { state: s, action: a, value: r });
            }
            if let Some(bound) = mdp.reward_bound {
                if bound.is_finite() && r.is_finite() && r.abs() > bound {
                    out.push(Violation::RewardBoundExceeded {
                        state: s,
                        action: a,
                        reward: r,
                        bound,
                    });
                }
            }
            let row = &mdp.transitions[s][a];
            let mut sum = 0.0;
            let mut row_ok = true;
            for (next, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    out.push(Violation::NonFiniteProbability {
                        state: s,
                        action: a,
                        next,
                        value: p,
                    });
                    row_ok = false;
                } else if p < 0.0 {
                    out.push(Violation::NegativeProbability {
                        state: s,
                        action: a,
                        next,
                        value: p,
                    });
                }
                sum += p;
            }
            if row_ok && (sum - 1.0).abs() > ROW_SUM_TOL {
                out.push(Violation::RowSumOffOne { state: s, action: a, sum });
            }
        }
    }
    for &t in &mdp.terminal {
        if t >= mdp.num_states {
            out.push(Violation::TerminalOutOfRange { state: t });
            continue;
        }
        for a in 0..mdp.actions[t].len() {
            let self_loop = mdp.transitions[t][a][t];
            if (self_loop - 1.0).abs() > ROW_SUM_TOL {
                out.push(Violation::TerminalNotAbsorbing { state: t, action: a });
            }
            let r = mdp.rewards[t][a];
            if r != 0.0 {
                out.push(Violation::TerminalRewardNonzero { state: t, action: a, reward: r });
            }
        }
    }
    out
}

/// Load a model from a JSON file; structural *and* numeric validation.
///
/// Parse failures carry the offending path and serde's line/column context
/// (e.g. a missing `gamma` names the field); numeric defects come back as
/// [`MdpError::Invalid`] with the full violation list.
pub fn load_mdp(path: impl AsRef<Path>) -> Result<TabularMdp, MdpError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MdpError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mdp: TabularMdp = serde_json::from_str(&text).map_err(|source| MdpError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let violations = validate_mdp(&mdp);
    if !violations.is_empty() {
        return Err(MdpError::Invalid(violations));
    }
    Ok(mdp)
}

/// Save a model as JSON. `load_mdp(save_mdp(m)) == m` field for field, with
/// probabilities preserved to full precision.
pub fn save_mdp(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<(), MdpError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(mdp).expect("a TabularMdp always serializes");
    std::fs::write(path, text).map_err(|source| MdpError::Io {
        path: path.display().to_string(),
        source,
    })
}
