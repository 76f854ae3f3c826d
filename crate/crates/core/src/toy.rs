//! A seeded, untrained decoder-only transformer used as a deterministic
//! test bed for eviction policies. Integer token ids only; pre-norm blocks,
//! multi-head causal attention, a two-layer MLP, sinusoidal positions, and
//! a tied output projection. Everything is a pure function of (seed, input).

use crate::error::{invalid, Result};
use crate::rng::{gaussian_matrix, stream_rng};
use crate::synth::dot_product;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ToyModelConfig {
    pub vocab: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_mult: usize,
    pub seed: u64,
}

impl ToyModelConfig {
    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 1 || self.layers < 1 || self.heads < 1 || self.head_dim < 1 || self.mlp_mult < 1 {
            return Err(invalid("ToyModelConfig: all counts must be >= 1"));
        }
        Ok(())
    }
}

/// Row-major weight matrix: `w[i][j]` maps input i to output j.
pub type Weight = Vec<Vec<f64>>;

pub struct LayerWeights {
    pub wq: Weight,
    pub wk: Weight,
    pub wv: Weight,
    pub wo: Weight,
    pub w1: Weight,
    pub w2: Weight,
}

pub struct ToyModel {
    pub cfg: ToyModelConfig,
    pub embedding: Weight, // vocab x D, also the tied output projection
    pub layers: Vec<LayerWeights>,
}

const INIT_STD: f64 = 0.02;

/// Seeded Gaussian-initialized decoder; identical config -> identical weights.
pub fn build_toy_model(cfg: &ToyModelConfig) -> Result<ToyModel> {
    cfg.validate()?;
    let d = cfg.model_dim();
    let mlp = cfg.mlp_mult * d;
    let out_std = INIT_STD / (cfg.layers as f64).sqrt();
    let mut stream = 0u64;
    let mut next = |rows: usize, cols: usize, std: f64| {
        let m = gaussian_matrix(&mut stream_rng(cfg.seed, stream), rows, cols, std);
        stream += 1;
        m
    };
    let embedding = next(cfg.vocab, d, INIT_STD);
    let layers = (0..cfg.layers)
        .map(|_| LayerWeights {
            wq: next(d, d, INIT_STD),
            wk: next(d, d, INIT_STD),
            wv: next(d, d, INIT_STD),
            wo: next(d, d, out_std),
            w1: next(d, mlp, INIT_STD),
            w2: next(mlp, d, out_std),
        })
        .collect();
    Ok(ToyModel { cfg: *cfg, embedding, layers })
}

pub fn matvec(x: &[f64], w: &Weight) -> Vec<f64> {
    let cols = w[0].len();
    let mut y = vec![0.0; cols];
    for (xi, row) in x.iter().zip(w) {
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    y
}

pub fn rmsnorm(x: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + 1e-6).sqrt();
    x.iter().map(|v| v * inv).collect()
}

fn gelu(x: f64) -> f64 {
    // tanh approximation, used consistently on both decode paths
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

pub fn mlp(x: &[f64], layer: &LayerWeights) -> Vec<f64> {
    let h: Vec<f64> = matvec(x, &layer.w1).into_iter().map(gelu).collect();
    matvec(&h, &layer.w2)
}

impl ToyModel {
    /// Token embedding plus a sinusoidal positional signal.
    pub fn embed_at(&self, token: u32, pos: usize) -> Result<Vec<f64>> {
        let token = token as usize;
        if token >= self.cfg.vocab {
            return Err(invalid(format!("token {token} out of vocab {}", self.cfg.vocab)));
        }
        let d = self.cfg.model_dim();
        let mut x = self.embedding[token].clone();
        for (i, xi) in x.iter_mut().enumerate() {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            *xi += INIT_STD * if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
        Ok(x)
    }

    /// Per-head slice of a projected D-vector.
    pub fn head_slice<'a>(&self, v: &'a [f64], head: usize) -> &'a [f64] {
        let hd = self.cfg.head_dim;
        &v[head * hd..(head + 1) * hd]
    }

    /// Tied-projection vocabulary logits for one hidden state.
    pub fn output_logits(&self, h: &[f64]) -> Vec<f64> {
        let hn = rmsnorm(h);
        self.embedding.iter().map(|row| dot_product(&hn, row)).collect()
    }

    /// Full forward over a token sequence with exact causal attention,
    /// returning the last position's vocabulary logits. No cache involved.
    pub fn reference_forward(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(invalid("reference_forward: empty input"));
        }
        let n = tokens.len();
        let hd = self.cfg.head_dim;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut h: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(pos, &t)| self.embed_at(t, pos))
            .collect::<Result<_>>()?;
        for layer in &self.layers {
            let xn: Vec<Vec<f64>> = h.iter().map(|row| rmsnorm(row)).collect();
            let q: Vec<Vec<f64>> = xn.iter().map(|x| matvec(x, &layer.wq)).collect();
            let k: Vec<Vec<f64>> = xn.iter().map(|x| matvec(x, &layer.wk)).collect();
            let v: Vec<Vec<f64>> = xn.iter().map(|x| matvec(x, &layer.wv)).collect();
            for i in 0..n {
                let mut concat = vec![0.0; self.cfg.model_dim()];
                for m in 0..self.cfg.heads {
                    let logits: Vec<f64> = (0..=i)
                        .map(|j| dot_product(self.head_slice(&q[i], m), self.head_slice(&k[j], m)) * scale)
                        .collect();
                    let attn = crate::numerics::softmax(&logits)?;
                    let out = &mut concat[m * hd..(m + 1) * hd];
                    for (j, &a) in attn.iter().enumerate() {
                        for (o, &vj) in out.iter_mut().zip(self.head_slice(&v[j], m)) {
                            *o += a * vj;
                        }
                    }
                }
                let proj = matvec(&concat, &layer.wo);
                for (hi, p) in h[i].iter_mut().zip(&proj) {
                    *hi += p;
                }
            }
            for row in h.iter_mut() {
                let m = mlp(&rmsnorm(row), layer);
                for (hi, mi) in row.iter_mut().zip(&m) {
                    *hi += mi;
                }
            }
        }
        Ok(self.output_logits(&h[n - 1]))
    }

    /// Greedy no-cache decode: recomputes the full forward pass each step.
    /// The baseline every cached decode is checked against.
    pub fn reference_decode(&self, prompt: &[u32], steps: usize) -> Result<Vec<u32>> {
        let mut seq = prompt.to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let logits = self.reference_forward(&seq)?;
            let next = argmax_lowest(&logits);
            seq.push(next);
            out.push(next);
        }
        Ok(out)
    }
}

/// Argmax with ties broken toward the lower token id.
pub fn argmax_lowest(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &x) in logits.iter().enumerate().skip(1) {
        if x > logits[best] {
            best = i;
        }
    }
    best as u32
}
