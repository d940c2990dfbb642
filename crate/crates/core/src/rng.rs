//! Purpose-tagged deterministic random streams.
//!
//! Every random draw in the crate goes through an [`RngStream`] identified by
//! `(master_seed, purpose_tag, stream_index)`. The stream key is
//!
//! ```text
//! SHA-256( "plasticity-rng-v1" || master_seed as u64 LE
//!          || tag length as u64 LE || tag bytes || stream_index as u64 LE )
//! ```
//!
//! and the generator is ChaCha8 keyed with that digest (`rand_chacha`, whose
//! keystream is value-stable across platforms and releases). Words are read as
//! little-endian `u64`s. Uniform reals take the top 53 bits, bounded integers
//! use rejection sampling, and shuffles are plain Fisher–Yates driven by the
//! bounded-integer draw, so sequences are bit-identical on every machine.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"plasticity-rng-v1";

/// A deterministic generator keyed by seed, purpose and index.
///
/// Streams are single-owner: clone one explicitly if two consumers really need
/// the same sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    purpose_tag: String,
    stream_index: u64,
    inner: ChaCha8Rng,
}

/// Shorthand for [`RngStream::new`].
pub fn rng_stream(master_seed: u64, purpose_tag: &str, stream_index: u64) -> RngStream {
    RngStream::new(master_seed, purpose_tag, stream_index)
}

impl RngStream {
    pub fn new(master_seed: u64, purpose_tag: &str, stream_index: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(DOMAIN);
        hasher.update(master_seed.to_le_bytes());
        hasher.update((purpose_tag.len() as u64).to_le_bytes());
        hasher.update(purpose_tag.as_bytes());
        hasher.update(stream_index.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self {
            master_seed,
            purpose_tag: purpose_tag.to_owned(),
            stream_index,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn purpose_tag(&self) -> &str {
        &self.purpose_tag
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform real in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform real in `[low, high)`.
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `[0, bound)`. Panics if `bound == 0`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        // Largest multiple of `bound` representable; draws above it are rejected.
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return x % bound;
            }
        }
    }

    /// Uniform integer in `[low, high)`.
    pub fn range(&mut self, low: u64, high: u64) -> u64 {
        assert!(low < high, "empty range");
        low + self.below(high - low)
    }

    /// Standard normal draw (ziggurat, `rand_distr`).
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// A direction drawn uniformly from the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let n = crate::vecops::norm(&v);
            if n > 0.0 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}
