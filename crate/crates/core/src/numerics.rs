//! Scalar/vector primitives shared by every policy: stabilized softmax
//! variants, row entropy, the adaptive scale schedule, mean pooling, and the
//! closed-form lognormal moments used as analytic targets by the Monte Carlo
//! oracles.

use crate::error::{invalid, Result};

/// A probability row: nonnegative entries summing to 1.
///
/// Produced by [`softmax`] / [`sg_softmax`]; the constructor enforces the
/// invariants so downstream code can rely on them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbRow(Vec<f64>);

impl ProbRow {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("ProbRow must be nonempty"));
        }
        if values.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("ProbRow entries must be finite and >= 0"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("ProbRow sums to {sum}, not 1")));
        }
        Ok(ProbRow(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ProbRow {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Numerically stabilized softmax (max subtraction, so any finite input is
/// safe, including magnitudes around 1e4).
pub fn softmax(row: &[f64]) -> Result<ProbRow> {
    if row.is_empty() {
        return Err(invalid("softmax: empty row"));
    }
    if row.iter().any(|x| !x.is_finite()) {
        return Err(invalid("softmax: non-finite logit"));
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbRow::new(exps.iter().map(|&e| e / sum).collect())
}

/// Step-gain softmax: softmax of the elementwise-scaled row `lambda * x`.
///
/// `lambda = 1` reduces to [`softmax`]; `lambda = 0` flattens to uniform.
pub fn sg_softmax(row: &[f64], lambda: f64) -> Result<ProbRow> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(invalid(format!("sg_softmax: lambda {lambda} must be finite and >= 0")));
    }
    let scaled: Vec<f64> = row.iter().map(|&x| lambda * x).collect();
    softmax(&scaled)
}

/// Shannon entropy in nats; `p = 0` terms contribute 0.
pub fn row_entropy(p: &ProbRow) -> f64 {
    p.iter()
        .map(|&q| if q > 0.0 { -q * q.ln() } else { 0.0 })
        .sum()
}

/// Scale schedule lambda(i) = max(floor, sqrt(2 ln(i/k) / d)), with the
/// radicand clamped at 0 for i <= k.
///
/// `floor` defaults to 1/sqrt(d) so eviction-score logits are never flatter
/// than standard scaled attention; pass 0 via [`LambdaSchedule::with_floor`]
/// for the literal schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LambdaSchedule {
    pub budget_k: usize,
    pub head_dim_d: usize,
    pub floor: f64,
}

impl LambdaSchedule {
    pub fn new(budget_k: usize, head_dim_d: usize) -> Result<Self> {
        let floor = 1.0 / (head_dim_d as f64).sqrt();
        Self::with_floor(budget_k, head_dim_d, floor)
    }

    pub fn with_floor(budget_k: usize, head_dim_d: usize, floor: f64) -> Result<Self> {
        if budget_k < 1 || head_dim_d < 1 {
            return Err(invalid("LambdaSchedule: budget_k and head_dim_d must be >= 1"));
        }
        if !floor.is_finite() || floor < 0.0 {
            return Err(invalid("LambdaSchedule: floor must be finite and >= 0"));
        }
        Ok(LambdaSchedule { budget_k, head_dim_d, floor })
    }

    /// Lambda for a row over `i` live tokens (1-indexed token count).
    pub fn lambda_for(&self, i: usize) -> f64 {
        let radicand = if i <= self.budget_k {
            0.0
        } else {
            2.0 * ((i as f64) / (self.budget_k as f64)).ln() / (self.head_dim_d as f64)
        };
        radicand.sqrt().max(self.floor)
    }
}

/// Expected attention-row entropy over `i` i.i.d. Gaussian logits with
/// variance `sigma2_logit`: ln i - sigma2/2.
///
/// The approximation only holds while the result stays well above 0;
/// validation is restricted to sigma2 <= 2 ln i.
pub fn expected_entropy(i: usize, sigma2_logit: f64) -> f64 {
    (i as f64).ln() - sigma2_logit / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(invalid("GaussianParams: mu finite, sigma2 finite and >= 0"));
        }
        Ok(GaussianParams { mu, sigma2 })
    }
}

/// E[e^x] for x ~ N(mu, sigma2): e^{mu + sigma2/2}.
pub fn lognormal_mean(p: GaussianParams) -> f64 {
    (p.mu + p.sigma2 / 2.0).exp()
}

/// E[x e^x] for x ~ N(mu, sigma2): e^{mu + sigma2/2} (mu + sigma2).
pub fn lognormal_xexp_mean(p: GaussianParams) -> f64 {
    (p.mu + p.sigma2 / 2.0).exp() * (p.mu + p.sigma2)
}

/// Centered mean filter with replicate padding at both edges.
pub fn avgpool_1d(v: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(invalid("avgpool_1d: empty input"));
    }
    if kernel == 0 || kernel % 2 == 0 {
        return Err(invalid(format!("avgpool_1d: kernel {kernel} must be odd and >= 1")));
    }
    let n = v.len();
    let half = (kernel / 2) as isize;
    let mut out = Vec::with_capacity(n);
    for t in 0..n as isize {
        let mut acc = 0.0;
        for off in -half..=half {
            let j = (t + off).clamp(0, n as isize - 1) as usize;
            acc += v[j];
        }
        out.push(acc / kernel as f64);
    }
    Ok(out)
}
