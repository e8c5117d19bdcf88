//! Seeded randomness beacon.
//!
//! Every simulated party sees the same per-epoch string; nobody can bias it or
//! learn it before its epoch. The beacon is a SHA-256 PRF of the master seed.
//! The same module hands out independent PRNG streams for the rest of the
//! simulator, so a single `--seed` pins every random choice in a run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::Digest;

pub type BeaconValue = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Beacon {
    pub seed: [u8; 32],
    pub epoch: u64,
}

impl Beacon {
    pub fn new(seed: [u8; 32]) -> Self {
        Self { seed, epoch: 0 }
    }

    pub fn from_u64(seed: u64) -> Self {
        Self::new(seed_bytes(seed))
    }

    pub fn value(&self, epoch: u64) -> BeaconValue {
        beacon_value(self, epoch)
    }

    /// Value of the current epoch, then advance.
    pub fn next_value(&mut self) -> BeaconValue {
        let v = self.value(self.epoch);
        self.epoch += 1;
        v
    }
}

pub fn beacon_value(state: &Beacon, epoch: u64) -> BeaconValue {
    Digest::of_fields(&[b"beacon", &state.seed, &epoch.to_be_bytes()]).0
}

/// Expands a `u64` master seed into 32 bytes.
pub fn seed_bytes(seed: u64) -> [u8; 32] {
    Digest::of_fields(&[b"master-seed", &seed.to_be_bytes()]).0
}

/// Uniform index in `[0, len)` drawn from the PRF stream keyed by `r`.
///
/// Rejection sampling on 64-bit blocks, so there is no modulo bias.
///
/// # Panics
///
/// If `len == 0`.
pub fn sample_index(r: &BeaconValue, len: usize) -> usize {
    assert!(len > 0, "sample_index over an empty range");
    let len = len as u64;
    let zone = u64::MAX - (u64::MAX % len + 1) % len;
    for counter in 0u64.. {
        let block = Digest::of_fields(&[b"sample", r, &counter.to_be_bytes()]);
        for chunk in block.0.chunks_exact(8) {
            let v = u64::from_be_bytes(chunk.try_into().unwrap());
            if v <= zone {
                return (v % len) as usize;
            }
        }
    }
    unreachable!()
}

/// Derives a sub-string of a beacon value for a labelled, indexed use.
pub fn derive(r: &BeaconValue, label: &str, index: u64) -> BeaconValue {
    Digest::of_fields(&[b"derive", r, label.as_bytes(), &index.to_be_bytes()]).0
}

/// Independent PRNG stream for `(seed, label, index)`.
pub fn rng_stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let d = Digest::of_fields(&[
        b"rng-stream",
        &seed.to_be_bytes(),
        label.as_bytes(),
        &index.to_be_bytes(),
    ]);
    ChaCha8Rng::from_seed(d.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_and_collision_free() {
        let b = Beacon::from_u64(42);
        assert_eq!(b.value(5), b.value(5));
        let values: HashSet<_> = (0..10_000).map(|e| b.value(e)).collect();
        assert_eq!(values.len(), 10_000);
        let other = Beacon::from_u64(43);
        let collisions = (0..10_000)
            .filter(|&e| other.value(e) == b.value(e))
            .count();
        assert_eq!(collisions, 0);
    }

    #[test]
    fn next_value_advances() {
        let mut b = Beacon::from_u64(1);
        let first = b.next_value();
        assert_eq!(first, b.value(0));
        assert_eq!(b.epoch, 1);
        assert_eq!(b.next_value(), b.value(1));
    }

    #[test]
    fn single_outcome_and_determinism() {
        let r = Beacon::from_u64(9).value(0);
        assert_eq!(sample_index(&r, 1), 0);
        assert_eq!(sample_index(&r, 7), sample_index(&r, 7));
    }

    #[test]
    #[should_panic]
    fn empty_range_is_a_caller_error() {
        sample_index(&[0u8; 32], 0);
    }

    /// Upper 1% point of chi-square with k - 1 degrees of freedom
    /// (Wilson-Hilferty approximation; z_0.99 = 2.326).
    fn chi2_crit(dof: f64) -> f64 {
        let z = 2.326_347_874;
        dof * (1.0 - 2.0 / (9.0 * dof) + z * (2.0 / (9.0 * dof)).sqrt()).powi(3)
    }

    fn chi2(counts: &[u64], total: u64) -> f64 {
        let e = total as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
    }

    #[test]
    fn uniformity_chi_square() {
        let b = Beacon::from_u64(2024);
        for len in [2usize, 7, 100] {
            let total = 100_000u64;
            let mut counts = vec![0u64; len];
            for e in 0..total {
                counts[sample_index(&b.value(e), len)] += 1;
            }
            let stat = chi2(&counts, total);
            assert!(stat < chi2_crit((len - 1) as f64), "len {len}: chi2 {stat}");
            if len == 7 {
                for &c in &counts {
                    assert!((c as f64 / total as f64 - 1.0 / 7.0).abs() < 0.01);
                }
            }
        }
    }

    #[test]
    fn consecutive_epochs_are_independent() {
        // 7x7 contingency tables of (index at 2e, index at 2e + 1), pooled over
        // ten seeds: the summed statistic is chi-square with 10 * 36 dof.
        let k = 7;
        let pairs = 20_000u64;
        let seeds = 10u64;
        let mut stat = 0.0;
        for seed in 0..seeds {
            let b = Beacon::from_u64(seed);
            let mut table = vec![0u64; k * k];
            for e in 0..pairs {
                let a = sample_index(&b.value(2 * e), k);
                let c = sample_index(&b.value(2 * e + 1), k);
                table[a * k + c] += 1;
            }
            let mut rows = vec![0u64; k];
            let mut cols = vec![0u64; k];
            for a in 0..k {
                for c in 0..k {
                    rows[a] += table[a * k + c];
                    cols[c] += table[a * k + c];
                }
            }
            for a in 0..k {
                for c in 0..k {
                    let e = rows[a] as f64 * cols[c] as f64 / pairs as f64;
                    stat += (table[a * k + c] as f64 - e).powi(2) / e;
                }
            }
        }
        let dof = (seeds as usize * (k - 1) * (k - 1)) as f64;
        assert!(stat < chi2_crit(dof), "chi2 {stat} over {dof} dof");
    }

    #[test]
    fn streams_differ_by_label_and_index() {
        use rand::RngCore;
        let a = rng_stream(1, "x", 0).next_u64();
        assert_eq!(a, rng_stream(1, "x", 0).next_u64());
        assert_ne!(a, rng_stream(1, "y", 0).next_u64());
        assert_ne!(a, rng_stream(1, "x", 1).next_u64());
    }
}
