//! Generative-model sampling and maximum-likelihood estimation.
//!
//! A generative model answers one kind of query: "draw a next state from
//! `P(. | s, a)`". [`sample_counts`] asks that query `n` times for every
//! state-action pair and tallies the outcomes; [`mle_model`] turns the tallies
//! into the empirical kernel `counts / n`, the plug-in model that downstream
//! solvers treat as the nominal center of an ambiguity ball.
//!
//! Sampling is deterministic given the seed: pair `(s, a)` draws from the
//! substream `Stream::from_parts(seed, &[s, a])`, and the `j`-th draw consumes
//! the `j`-th variate of that substream through inverse-CDF lookup. Substreams
//! make the result independent of sweep order, so parallel runs with any
//! worker count produce identical counts.

use crate::mdp::{Kernel, TabularMdp};
use crate::par;
use crate::rng::Stream;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Next-state tallies from a generative model: `counts[s][a][s']` out of `n`
/// draws per state-action pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    pub n: u64,
    pub counts: Vec<Vec<Vec<u64>>>,
}

/// Problems turning counts into a model or moving them through files.
#[derive(Debug, Error)]
pub enum GenerativeError {
    #[error("counts hold zero samples per pair; nothing to estimate")]
    ZeroSamples,
    #[error("counts shape does not match the model at state {state}: {detail}")]
    Shape { state: usize, detail: String },
    #[error("counts at (s={state}, a={action}) sum to {sum}, expected n = {n}")]
    SumMismatch { state: usize, action: usize, sum: u64, n: u64 },
    #[error("failed to read {path}")]
    Io { path: PathBuf, #[source] source: std::io::Error },
    #[error("failed to parse {path}")]
    Parse { path: PathBuf, #[source] source: serde_json::Error },
}

/// Draw `n` next states per state-action pair from the nominal kernel.
///
/// Deterministic in `seed` and independent of worker count; see the module
/// docs for the exact substream layout.
pub fn sample_counts(mdp: &TabularMdp, n: u64, seed: u64) -> TransitionCounts {
    let num_states = mdp.num_states();
    let mut counts: Vec<Vec<Vec<u64>>> = (0..num_states)
        .map(|s| (0..mdp.num_actions(s)).map(|_| vec![0u64; num_states]).collect())
        .collect();
    par::for_each_mut(&mut counts, |s, state_counts| {
        for (a, tally) in state_counts.iter_mut().enumerate() {
            let row = mdp.kernel_row(s, a);
            // Support-restricted inverse CDF: same index for the same variate
            // as a full-row scan (zero-probability entries can never win),
            // just without walking the zeros.
            let support: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (i, p))
                .collect();
            let mut stream = Stream::from_parts(seed, &[s as u64, a as u64]);
            for _ in 0..n {
                let u = stream.next_f64();
                let mut cum = 0.0;
                let mut pick = support[support.len() - 1].0;
                for &(i, p) in &support {
                    cum += p;
                    if u < cum {
                        pick = i;
                        break;
                    }
                }
                tally[pick] += 1;
            }
        }
    });
    TransitionCounts { n, counts }
}

/// Maximum-likelihood kernel from tallies: `P_hat(s' | s, a) = counts / n`.
pub fn mle_model(mdp: &TabularMdp, counts: &TransitionCounts) -> Result<Kernel, GenerativeError> {
    if counts.n == 0 {
        return Err(GenerativeError::ZeroSamples);
    }
    let shape = |state: usize, detail: String| GenerativeError::Shape { state, detail };
    if counts.counts.len() != mdp.num_states() {
        return Err(shape(
            0,
            format!("{} states, expected {}", counts.counts.len(), mdp.num_states()),
        ));
    }
    let n = counts.n;
    let mut kernel: Kernel = Vec::with_capacity(mdp.num_states());
    for (s, state_counts) in counts.counts.iter().enumerate() {
        if state_counts.len() != mdp.num_actions(s) {
            return Err(shape(
                s,
                format!("{} actions, expected {}", state_counts.len(), mdp.num_actions(s)),
            ));
        }
        let mut rows = Vec::with_capacity(state_counts.len());
        for (a, tally) in state_counts.iter().enumerate() {
            if tally.len() != mdp.num_states() {
                return Err(shape(
                    s,
                    format!("action {a} tally has {} entries, expected {}", tally.len(), mdp.num_states()),
                ));
            }
            let sum: u64 = tally.iter().sum();
            if sum != n {
                return Err(GenerativeError::SumMismatch { state: s, action: a, sum, n });
            }
            rows.push(tally.iter().map(|&k| k as f64 / n as f64).collect());
        }
        kernel.push(rows);
    }
    Ok(kernel)
}

/// Sample and estimate in one step: the plug-in model
/// (nominal rewards and discount, empirical kernel).
pub fn estimate_mdp(mdp: &TabularMdp, n: u64, seed: u64) -> Result<TabularMdp, GenerativeError> {
    let counts = sample_counts(mdp, n, seed);
    let kernel = mle_model(mdp, &counts)?;
    mdp.with_kernel(kernel).map_err(|e| GenerativeError::Shape {
        state: 0,
        detail: format!("estimated kernel rejected: {e}"),
    })
}

/// Write tallies as pretty JSON (`{"n": ..., "counts": ...}`).
pub fn save_counts(counts: &TransitionCounts, path: &Path) -> Result<(), GenerativeError> {
    let text = serde_json::to_string_pretty(counts).map_err(|source| GenerativeError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|source| GenerativeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read tallies back from JSON.
pub fn load_counts(path: &Path) -> Result<TransitionCounts, GenerativeError> {
    let text = std::fs::read_to_string(path).map_err(|source| GenerativeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| GenerativeError::Parse {
        path: path.to_path_buf(),
        source,
    })
}
