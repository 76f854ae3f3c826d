//! Deterministic (seed, stream) keyed random streams.
//!
//! Every randomized component draws from its own stream so per-trial,
//! per-matrix, and per-tensor draws are independent and replayable
//! regardless of execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A deterministic RNG for the given (seed, stream) pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// n x d matrix of i.i.d. N(0, sigma^2) entries.
pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, sigma: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Deterministic token-id sequence in [0, vocab).
pub fn random_tokens(seed: u64, stream: u64, len: usize, vocab: u32) -> Vec<u32> {
    let mut rng = stream_rng(seed, stream);
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}
