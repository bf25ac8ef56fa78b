//! Deterministic keyed randomness.
//!
//! Every random decision in the simulator draws from a stream keyed by
//! (seed, client, counter, purpose). Streams are independent by key and
//! reproduce the same draw sequence on every platform, so parallel and
//! sequential schedules cannot diverge.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::tensor::ClientId;

/// FNV-1a, used only to fold the purpose string into the stream key.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// A deterministic random stream.
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    /// Opens the stream keyed by (seed, client, counter, purpose).
    ///
    /// `counter` disambiguates repeated uses of one purpose, e.g. the round
    /// index during training or the image index during augmentation.
    pub fn stream(seed: u64, client: ClientId, counter: u64, purpose: &str) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&(client.0 as u64).to_le_bytes());
        key[16..24].copy_from_slice(&counter.to_le_bytes());
        key[24..32].copy_from_slice(&fnv1a64(purpose.as_bytes()).to_le_bytes());
        Self {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// First word of a stream, for seeding nested components.
    pub fn derive(seed: u64, client: ClientId, counter: u64, purpose: &str) -> u64 {
        Self::stream(seed, client, counter, purpose).next_u64()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unbiased uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Draws `k` distinct indices from [0, n) without replacement,
    /// returned in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n} without replacement");
        let mut pool: Vec<usize> = (0..n).collect();
        let mut picked = Vec::with_capacity(k);
        for _ in 0..k {
            let j = self.below(pool.len());
            picked.push(pool.swap_remove(j));
        }
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = Rng::stream(7, ClientId(2), 5, "train");
        let mut b = Rng::stream(7, ClientId(2), 5, "train");
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_keys_diverge() {
        let base: Vec<u64> = {
            let mut r = Rng::stream(7, ClientId(0), 0, "train");
            (0..8).map(|_| r.next_u64()).collect()
        };
        for (seed, client, counter, purpose) in [
            (8, ClientId(0), 0, "train"),
            (7, ClientId(1), 0, "train"),
            (7, ClientId(0), 1, "train"),
            (7, ClientId(0), 0, "publish"),
        ] {
            let mut r = Rng::stream(seed, client, counter, purpose);
            let other: Vec<u64> = (0..8).map(|_| r.next_u64()).collect();
            assert_ne!(base, other);
        }
    }

    #[test]
    fn sampling_is_distinct_and_complete() {
        let mut r = Rng::stream(1, ClientId(0), 0, "sample");
        let mut picked = r.sample_without_replacement(5, 5);
        picked.sort_unstable();
        assert_eq!(picked, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::stream(3, ClientId(0), 0, "u");
        for _ in 0..1000 {
            let v = r.uniform();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn below_covers_range() {
        let mut r = Rng::stream(3, ClientId(0), 0, "b");
        let mut seen = [false; 7];
        for _ in 0..200 {
            seen[r.below(7)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
