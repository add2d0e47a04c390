//! Tabular robust Markov decision processes.
//!
//! A robust MDP replaces the single transition kernel of an ordinary MDP with
//! an *ambiguity set* of kernels around a nominal model, and evaluates every
//! Bellman backup against the worst kernel in the set:
//!
//! ```text
//! (T V)(s) = max_a [ r(s,a) + gamma * inf_{p in B(s,a)} p . V ]
//! ```
//!
//! With (s,a)-rectangular sets the inner infimum decomposes per state-action
//! row, and `T` stays a gamma-contraction, so robust value iteration converges
//! geometrically just like the classical operator.
//!
//! The crate is organised around that backup:
//!
//! - [`mdp`] — the tabular model, validation, and the on-disk JSON format;
//! - [`ambiguity`] — worst-case expectations `sigma_B(v) = inf_{p in B} p.v`
//!   for total-variation, chi-square, and KL balls, finite kernel sets, and a
//!   brute-force simplex-grid oracle used to cross-check the fast solvers;
//! - [`robustdp`] — robust value iteration, fixed-iteration-count value
//!   iteration on sampled models, policy evaluation, and greedy policies;
//! - [`generative`] — seeded generative-model sampling and maximum-likelihood
//!   kernel estimates;
//! - [`bounds`] — closed-form iteration/sample-complexity calculators and a
//!   two-state construction separating robust from non-robust policies;
//! - [`envs`] — the Gambler's-problem and FrozenLake benchmark MDPs;
//! - [`harness`] — experiment drivers that emit deterministic CSV records;
//! - [`rng`] — the counter-based random streams behind all sampling.
//!
//! Heavy loops (per-row backups inside a sweep, sampling, rollout batches) run
//! data-parallel under rayon when the default `parallel` feature is enabled;
//! disabling it swaps in sequential loops with bit-identical results.

pub mod ambiguity;
pub mod bounds;
pub mod envs;
pub mod generative;
pub mod harness;
pub mod mdp;
mod par;
pub mod rng;
pub mod robustdp;

pub use ambiguity::{sigma_chi2, sigma_kl, sigma_tv, SigmaResult};
pub use mdp::{load_mdp, save_mdp, validate_mdp, AmbiguitySet, Distribution, TabularMdp};
pub use robustdp::{revi, robust_value_iteration, SolveReport};
