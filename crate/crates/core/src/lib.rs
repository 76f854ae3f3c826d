//! AhaKV: adaptive holistic-attention KV-cache eviction, with baseline
//! policies and Monte Carlo verification of the statistical claims behind
//! the scoring rules.
//!
//! Layout:
//! - [`numerics`]: softmax variants, entropy, the lambda schedule, pooling,
//!   lognormal moments
//! - [`synth`]: Gaussian Q/K/V instances and causal logit/attention matrices
//! - [`toy`]: a seeded, untrained decoder-only transformer test bed
//! - [`policy`]: eviction scoring and retained-set selection
//! - [`cache`]: the per-head cache state machine and end-to-end decoding
//! - [`stats`]: Monte Carlo oracles and positional-bias metrics

pub mod cache;
pub mod error;
pub mod numerics;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod toy;

pub use cache::{greedy_decode, prefill, run_policy_end_to_end, GenerationTrace, HeadCacheState};
pub use error::{Error, Result};
pub use numerics::{LambdaSchedule, ProbRow};
pub use policy::{Policy, PolicyConfig, RetainedSet};
pub use stats::{BiasMetrics, McReport};
pub use synth::{CausalAttention, CausalLogits, QkvSet, ScaleMode, SynthConfig};
pub use toy::{build_toy_model, ToyModel, ToyModelConfig};
