//! Reproducible counter-based random streams.
//!
//! Every replicate owns an independent ChaCha stream keyed by
//! `(seed, tag, replicate)`, so results do not depend on scheduling order
//! and replicates can run in parallel without coordination.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random stream handed to simulations.
pub type RngStream = ChaCha8Rng;

/// Factory of independent streams derived from a single experiment seed.
#[derive(Clone, Copy, Debug)]
pub struct StreamFamily {
    seed: u64,
}

impl StreamFamily {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `replicate` under a purpose `tag`. Replicate indices must
    /// stay below 2^40 so tags and replicates cannot collide.
    pub fn stream(&self, tag: u64, replicate: u64) -> RngStream {
        debug_assert!(replicate < (1 << 40));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((tag << 40) | replicate);
        rng
    }

    pub fn replicate(&self, replicate: u64) -> RngStream {
        self.stream(0, replicate)
    }
}

/// Uniform draw in the open interval (0, 1).
#[inline]
pub fn open01(rng: &mut RngStream) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}

/// Exponential variate with the given rate.
#[inline]
pub fn sample_exp(rng: &mut RngStream, rate: f64) -> f64 {
    debug_assert!(rate > 0.0);
    -open01(rng).ln() / rate
}

/// Number of failures before the first success for success probability `p`.
#[inline]
pub fn sample_geometric_failures(rng: &mut RngStream, p: f64) -> u64 {
    debug_assert!(p > 0.0 && p <= 1.0);
    if p >= 1.0 {
        return 0;
    }
    let u = open01(rng);
    let k = (u.ln() / (-p).ln_1p()).floor();
    if k < 0.0 {
        0
    } else {
        k as u64
    }
}

/// Index drawn proportionally to the (non-negative) weights.
pub fn sample_categorical(rng: &mut RngStream, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut target = open01(rng) * total;
    for (i, w) in weights.iter().enumerate() {
        target -= w;
        if target <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
