//! Monte Carlo checks of the module-level statistical invariants on
//! synthetic Gaussian attention.

use ahakv_core::numerics::{expected_entropy, row_entropy, softmax};
use ahakv_core::rng::{gaussian_matrix, stream_rng};
use ahakv_core::stats::trial_seed;
use ahakv_core::synth::dot_product;

/// Empirical mean entropy of attention row i (scaled logits) matches
/// expected_entropy(i+1, sigma_hat^2) within 5% relative at d = 64.
#[test]
fn attention_row_entropy_matches_expectation() {
    let d = 64;
    let trials = 200;
    for &row_len in &[256usize, 1024] {
        let mut entropies = Vec::with_capacity(trials);
        let mut logit_sum = 0.0;
        let mut logit_sumsq = 0.0;
        let mut count = 0usize;
        for t in 0..trials {
            let seed = trial_seed(0xA11A, t as u64);
            let q = gaussian_matrix(&mut stream_rng(seed, 0), 1, d, 1.0);
            let k = gaussian_matrix(&mut stream_rng(seed, 1), row_len, d, 1.0);
            let scale = 1.0 / (d as f64).sqrt();
            let logits: Vec<f64> = k.iter().map(|kj| dot_product(&q[0], kj) * scale).collect();
            for &x in &logits {
                logit_sum += x;
                logit_sumsq += x * x;
                count += 1;
            }
            entropies.push(row_entropy(&softmax(&logits).unwrap()));
        }
        let mean_h = entropies.iter().sum::<f64>() / trials as f64;
        let mean_logit = logit_sum / count as f64;
        let sigma2_hat = logit_sumsq / count as f64 - mean_logit * mean_logit;
        assert!((sigma2_hat - 1.0).abs() < 0.1, "logit variance {sigma2_hat}");
        let target = expected_entropy(row_len, sigma2_hat);
        let rel = (mean_h - target).abs() / target;
        assert!(rel <= 0.05, "row_len {row_len}: mean H {mean_h} vs target {target} (rel {rel})");
    }
}
