//! Deterministic randomness and stable hashing.
//!
//! All randomness in the lab flows through [`Rng`], a ChaCha8 stream seeded
//! from explicit 64-bit seeds. Child seeds are derived with a fixed FNV-1a
//! hash so that adding a method to an experiment never perturbs the random
//! stream of another.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a over raw bytes. Stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Child seed for a named sub-stream: hash of (master seed, tag).
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + tag.len());
    bytes.extend_from_slice(&master.to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    fnv1a(&bytes)
}

/// Content hash of one labelled row: label plus the bit patterns of the
/// input features. Used by the zero-glance guard.
pub fn row_hash(label: usize, features: &[f64]) -> u64 {
    let mut bytes = Vec::with_capacity(8 + features.len() * 8);
    bytes.extend_from_slice(&(label as u64).to_le_bytes());
    for &v in features {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fnv1a(&bytes)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic random stream. ChaCha8 keyed by splitmix expansion of a
/// 64-bit seed; normals via Box-Muller so the byte stream never depends on
/// distribution-crate internals.
#[derive(Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Rng {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller (cosine branch).
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so ln never sees zero.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}
