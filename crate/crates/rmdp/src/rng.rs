//! Deterministic counter-based random streams.
//!
//! Every random draw in this crate comes from a [`Stream`]: a splitmix64
//! generator whose seed is derived from `(experiment seed, logical indices)`.
//! Sampling for the (s,a) pair of a generative model, or for trial `t` of a
//! rollout sweep, owns its own stream, so results are independent of thread
//! count, scheduling, and evaluation order — rerunning with one worker or
//! eight produces byte-identical artifacts.
//!
//! The generator is pinned bit-exactly so results are reproducible across
//! platforms and easy to port:
//!
//! - state update: `state = state + 0x9E3779B97F4A7C15 (mod 2^64)`;
//! - output: `mix64(state)` where `mix64` is the splitmix64 finalizer
//!   `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//!    z *= 0x94D049BB133111EB; z ^= z >> 31`;
//! - unit-interval draw: `(next_u64() >> 11) * 2^-53`, i.e. the top 53 bits;
//! - stream keys: `stream_key(seed, parts)` starts from
//!   `mix64(seed ^ 0x9E3779B97F4A7C15)` and absorbs each index with
//!   `key = mix64((key + 0x9E3779B97F4A7C15) ^ part)`.

/// Golden-ratio increment used by splitmix64.
const GOLDEN: u64 = 0x9E3779B97F4A7C15;

/// splitmix64 finalizer: a bijective avalanche mix of the 64-bit state.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive the key of an independent substream from a base seed and a list of
/// logical indices (state, action, trial number, ...).
pub fn stream_key(seed: u64, parts: &[u64]) -> u64 {
    let mut key = mix64(seed ^ GOLDEN);
    for &part in parts {
        key = mix64(key.wrapping_add(GOLDEN) ^ part);
    }
    key
}

/// A splitmix64 pseudo-random stream.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    /// Stream seeded directly from a key (usually a [`stream_key`] result).
    pub fn from_key(key: u64) -> Self {
        Stream { state: key }
    }

    /// Stream for the substream identified by `(seed, parts)`.
    pub fn from_parts(seed: u64, parts: &[u64]) -> Self {
        Stream::from_key(stream_key(seed, parts))
    }

    /// Next raw 64-bit draw.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Next draw uniform on `[0, 1)`, using the top 53 bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform index in `0..n` via a single unit draw (`floor(u * n)`).
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let i = (self.next_f64() * n as f64) as usize;
        i.min(n - 1)
    }

    /// Sample an index from a probability row by inverse CDF: one unit draw
    /// `u`, then the first index whose cumulative probability exceeds `u`.
    ///
    /// If accumulated rounding leaves `u` past the total mass, the last index
    /// with positive probability is returned, so rows that sum to 1 only up
    /// to floating-point error still sample correctly.
    pub fn sample_index(&mut self, probs: &[f64]) -> usize {
        let u = self.next_f64();
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
                cum += p;
                if u < cum {
                    return i;
                }
            }
        }
        last_positive
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = Stream::from_parts(42, &[3, 1]);
        let mut b = Stream::from_parts(42, &[3, 1]);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn different_parts_decorrelate() {
        let mut a = Stream::from_parts(42, &[3, 1]);
        let mut b = Stream::from_parts(42, &[3, 2]);
        let mut c = Stream::from_parts(43, &[3, 1]);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
    }

    #[test]
    fn key_depends_on_index_position() {
        // (1, 2) and (2, 1) are different substreams.
        assert_ne!(stream_key(0, &[1, 2]), stream_key(0, &[2, 1]));
        // Absorbing an extra index changes the key.
        assert_ne!(stream_key(0, &[1]), stream_key(0, &[1, 0]));
    }

    #[test]
    fn unit_draws_live_in_unit_interval() {
        let mut s = Stream::from_key(7);
        for _ in 0..10_000 {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn sample_index_matches_inverse_cdf_by_hand() {
        // A stream with known first draw: replicate the arithmetic here so a
        // change to the generator or the tie rule shows up as a test failure.
        let mut s = Stream::from_key(123);
        let mut probe = Stream::from_key(123);
        let u = probe.next_f64();
        let row = [0.25, 0.25, 0.5];
        let expect = if u < 0.25 {
            0
        } else if u < 0.5 {
            1
        } else {
            2
        };
        assert_eq!(s.sample_index(&row), expect);
    }

    #[test]
    fn sample_index_skips_zero_mass_states() {
        let mut s = Stream::from_key(99);
        for _ in 0..1000 {
            let i = s.sample_index(&[0.0, 0.7, 0.0, 0.3]);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn sample_index_frequencies_track_probabilities() {
        let mut s = Stream::from_key(2024);
        let row = [0.2, 0.5, 0.3];
        let mut hits = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            hits[s.sample_index(&row)] += 1;
        }
        for (h, p) in hits.iter().zip(row.iter()) {
            let freq = *h as f64 / n as f64;
            assert!((freq - p).abs() < 0.01, "freq {freq} vs p {p}");
        }
    }
}
