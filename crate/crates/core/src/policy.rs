//! Eviction scoring and retained-set selection: accumulated attention
//! scores (H2O), recent accumulation, step-gain scoring, value-prior
//! refinement, and the baseline selection rules.

use crate::error::{invalid, Result};
use crate::numerics::{avgpool_1d, sg_softmax, LambdaSchedule};
use crate::synth::{CausalAttention, CausalLogits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Full,
    Sink,
    H2o,
    RecentAccum,
    Aha,
}

impl Policy {
    pub const ALL: [Policy; 5] =
        [Policy::Full, Policy::Sink, Policy::H2o, Policy::RecentAccum, Policy::Aha];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Full => "full",
            Policy::Sink => "sink",
            Policy::H2o => "h2o",
            Policy::RecentAccum => "recent_accum",
            Policy::Aha => "aha",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Policy::Full),
            "sink" => Ok(Policy::Sink),
            "h2o" => Ok(Policy::H2o),
            "recent_accum" => Ok(Policy::RecentAccum),
            "aha" => Ok(Policy::Aha),
            other => Err(invalid(format!("unknown policy '{other}'"))),
        }
    }
}

/// Budget split and scoring parameters. The total budget is always
/// `recent_budget + selected_budget`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PolicyConfig {
    pub total_budget: usize,
    pub recent_budget: usize,
    pub selected_budget: usize,
    pub lambda: LambdaSchedule,
    pub pool_kernel: usize,
    pub policy: Policy,
    /// Always-kept prefix size for the sink baseline.
    pub sink_prefix: usize,
}

impl PolicyConfig {
    pub fn new(policy: Policy, recent_budget: usize, selected_budget: usize, head_dim: usize) -> Result<Self> {
        let total = recent_budget + selected_budget;
        let cfg = PolicyConfig {
            total_budget: total,
            recent_budget,
            selected_budget,
            lambda: LambdaSchedule::new(total.max(1), head_dim)?,
            pool_kernel: 7,
            policy,
            sink_prefix: 4,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_budget != self.recent_budget + self.selected_budget {
            return Err(invalid("PolicyConfig: B must equal Br + Bs"));
        }
        if self.recent_budget < 1 {
            return Err(invalid("PolicyConfig: Br must be >= 1"));
        }
        if self.pool_kernel == 0 || self.pool_kernel % 2 == 0 {
            return Err(invalid("PolicyConfig: pool_kernel must be odd"));
        }
        Ok(())
    }
}

/// Strictly increasing token indices retained in the cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetainedSet {
    indices: Vec<usize>,
}

impl RetainedSet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Ok(RetainedSet { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }
}

/// H2O accumulated score: column sums over all attention rows.
pub fn h2o_scores(attn: &CausalAttention) -> Vec<f64> {
    let n = attn.n();
    let mut scores = vec![0.0; n];
    for row in attn.rows() {
        for (j, &a) in row.iter().enumerate() {
            scores[j] += a;
        }
    }
    scores
}

/// Column sums over the last `r` rows only, so every scored token has the
/// same number of summands.
pub fn recent_accum_scores(attn: &CausalAttention, r: usize) -> Result<Vec<f64>> {
    let n = attn.n();
    if r < 1 || r > n {
        return Err(invalid(format!("recent_accum_scores: r = {r} out of range 1..={n}")));
    }
    let mut scores = vec![0.0; n];
    for row in &attn.rows()[n - r..] {
        for (j, &a) in row.iter().enumerate() {
            scores[j] += a;
        }
    }
    Ok(scores)
}

/// Step-gain recent accumulation: each of the last `r` logit rows is passed
/// through sg_softmax with lambda from the schedule at that row's live token
/// count, then column-summed.
pub fn sg_recent_scores(w: &CausalLogits, r: usize, sched: &LambdaSchedule) -> Result<Vec<f64>> {
    let n = w.n();
    if r < 1 || r > n {
        return Err(invalid(format!("sg_recent_scores: r = {r} out of range 1..={n}")));
    }
    let mut scores = vec![0.0; n];
    for i in n - r..n {
        let row = sg_softmax(w.row(i), sched.lambda_for(i + 1))?;
        for (j, &a) in row.iter().enumerate() {
            scores[j] += a;
        }
    }
    Ok(scores)
}

/// Normalized, mean-filtered squared value norms used as multiplicative
/// prior weights on eviction scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePrior {
    pub gamma_bar: Vec<f64>,
    pub kernel: usize,
}

pub fn value_prior(v: &[Vec<f64>], kernel: usize) -> Result<ValuePrior> {
    if v.is_empty() {
        return Err(invalid("value_prior: empty value matrix"));
    }
    let norms: Vec<f64> = v.iter().map(|row| row.iter().map(|x| x * x).sum()).collect();
    let gamma = avgpool_1d(&norms, kernel)?;
    let max = gamma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gamma_bar = if max > 0.0 {
        gamma.iter().map(|&g| g / max).collect()
    } else {
        // degenerate all-zero values carry no preference
        vec![1.0; gamma.len()]
    };
    Ok(ValuePrior { gamma_bar, kernel })
}

/// Elementwise refinement: S_hat_i = gamma_bar_i * S_i.
pub fn refine_scores(scores: &[f64], prior: &ValuePrior) -> Result<Vec<f64>> {
    if scores.len() != prior.gamma_bar.len() {
        return Err(invalid(format!(
            "refine_scores: length mismatch ({} scores, {} weights)",
            scores.len(),
            prior.gamma_bar.len()
        )));
    }
    Ok(scores.iter().zip(&prior.gamma_bar).map(|(s, g)| s * g).collect())
}

/// Recent window (last min(br, n) indices) unioned with the bs
/// highest-scoring remaining indices; ties break toward the lower index.
pub fn select_retained(scores: &[f64], n: usize, br: usize, bs: usize) -> RetainedSet {
    debug_assert_eq!(scores.len(), n);
    if n <= br + bs {
        return RetainedSet { indices: (0..n).collect() };
    }
    let recent_start = n - br.min(n);
    let mut rest: Vec<usize> = (0..recent_start).collect();
    rest.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    rest.truncate(bs);
    let mut indices: Vec<usize> = rest;
    indices.extend(recent_start..n);
    indices.sort_unstable();
    RetainedSet { indices }
}

/// Sink baseline: first min(n_init, n) indices plus the last min(br, n).
pub fn sink_retained(n: usize, n_init: usize, br: usize) -> RetainedSet {
    let mut indices: Vec<usize> = (0..n_init.min(n)).collect();
    indices.extend(n.saturating_sub(br)..n);
    indices.sort_unstable();
    indices.dedup();
    RetainedSet { indices }
}

/// Last-query baseline: selection driven by the final attention row alone.
pub fn last_query_retained(attn: &CausalAttention, cfg: &PolicyConfig) -> Result<RetainedSet> {
    let scores = recent_accum_scores(attn, 1)?;
    Ok(select_retained(&scores, attn.n(), cfg.recent_budget, cfg.selected_budget))
}
