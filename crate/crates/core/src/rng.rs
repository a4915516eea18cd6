//! Counter-based random streams.
//!
//! Every Monte Carlo sample draws from its own ChaCha stream keyed by
//! `(seed, sample index)`, and independent lanes inside a sample (one per
//! Brownian path, say) start at well-separated word positions of that stream.
//! Outputs therefore depend only on the seed, never on how samples are
//! distributed over workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 2^40 32-bit words per lane; no realistic lane consumes that many.
const LANE_STRIDE_WORDS: u128 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for one sample, positioned at the start of `lane`.
    pub fn stream(&self, sample: u64, lane: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(sample);
        rng.set_word_pos(lane as u128 * LANE_STRIDE_WORDS);
        rng
    }

    /// Derived key for an independent experiment sharing the same user seed.
    pub fn derive(&self, tag: u64) -> StreamKey {
        // splitmix64 finalizer
        let mut z = self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        StreamKey { seed: z ^ (z >> 31) }
    }
}

/// Runs `f` inside a rayon pool with `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
