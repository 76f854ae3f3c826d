//! Synthetic causal attention instances: Gaussian Q/K/V and the
//! lower-triangular logit/attention matrices every scoring policy consumes.

use crate::error::{invalid, Result};
use crate::numerics::{softmax, ProbRow};
use crate::rng::{gaussian_matrix, stream_rng};

/// How pre-softmax logits are scaled at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Q_i . K_j / sqrt(d) — logit variance ~= 1 for unit-variance inputs.
    ScaledBySqrtD,
    /// Raw Q_i . K_j — logit variance ~= d.
    Unscaled,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub scale_mode: ScaleMode,
}

/// Per-head query/key/value matrices, each n x d.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvSet {
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub n: usize,
    pub d: usize,
}

// Stream ids for the three matrices under one seed.
const STREAM_Q: u64 = 0;
const STREAM_K: u64 = 1;
const STREAM_V: u64 = 2;

/// i.i.d. standard-normal Q, K, V from (seed, stream) keyed streams; the
/// same seed always yields bit-identical matrices.
pub fn gaussian_qkv(cfg: &SynthConfig) -> Result<QkvSet> {
    if cfg.n < 1 || cfg.d < 1 {
        return Err(invalid("SynthConfig: n and d must be >= 1"));
    }
    Ok(QkvSet {
        q: gaussian_matrix(&mut stream_rng(cfg.seed, STREAM_Q), cfg.n, cfg.d, 1.0),
        k: gaussian_matrix(&mut stream_rng(cfg.seed, STREAM_K), cfg.n, cfg.d, 1.0),
        v: gaussian_matrix(&mut stream_rng(cfg.seed, STREAM_V), cfg.n, cfg.d, 1.0),
        n: cfg.n,
        d: cfg.d,
    })
}

/// Lower-triangular pre-softmax scores. Masked entries are absent (row i
/// holds exactly i+1 values), so no -inf sentinels exist anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalLogits {
    rows: Vec<Vec<f64>>,
    scale: f64,
}

impl CausalLogits {
    /// Build from ragged rows (row i must have length i+1).
    pub fn from_rows(rows: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(invalid(format!("row {i} has length {}, want {}", row.len(), i + 1)));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("row {i} contains non-finite logits")));
            }
        }
        if rows.is_empty() {
            return Err(invalid("CausalLogits: no rows"));
        }
        Ok(CausalLogits { rows, scale })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// w[i][j] = (Q_i . K_j) * s for j <= i, with s = 1/sqrt(d) or 1 per mode.
pub fn causal_logits(q: &[Vec<f64>], k: &[Vec<f64>], mode: ScaleMode) -> Result<CausalLogits> {
    if q.len() != k.len() || q.is_empty() {
        return Err(invalid("causal_logits: Q and K must be nonempty with equal row counts"));
    }
    let d = q[0].len();
    if d == 0 || q.iter().chain(k.iter()).any(|r| r.len() != d) {
        return Err(invalid("causal_logits: inconsistent head dimension"));
    }
    let scale = match mode {
        ScaleMode::ScaledBySqrtD => 1.0 / (d as f64).sqrt(),
        ScaleMode::Unscaled => 1.0,
    };
    let rows = q
        .iter()
        .enumerate()
        .map(|(i, qi)| {
            (0..=i)
                .map(|j| dot_product(qi, &k[j]) * scale)
                .collect()
        })
        .collect();
    CausalLogits::from_rows(rows, scale)
}

pub fn dot_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-stochastic lower-triangular attention matrix (ragged, like the logits).
#[derive(Debug, Clone)]
pub struct CausalAttention {
    rows: Vec<ProbRow>,
}

impl CausalAttention {
    pub fn from_rows(rows: Vec<ProbRow>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(invalid(format!("attention row {i} has wrong length")));
            }
        }
        if rows.is_empty() {
            return Err(invalid("CausalAttention: no rows"));
        }
        Ok(CausalAttention { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &ProbRow {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[ProbRow] {
        &self.rows
    }
}

/// Row-wise softmax of the causal logits. Row i is a distribution over the
/// first i+1 tokens; masked entries contribute exactly 0 by absence.
pub fn attention_matrix(w: &CausalLogits) -> CausalAttention {
    let rows = w
        .rows
        .iter()
        .map(|r| softmax(r).expect("CausalLogits rows are nonempty and finite"))
        .collect();
    CausalAttention { rows }
}
