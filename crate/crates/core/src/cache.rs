//! Per-head cache state machine: prefill selection, per-step generation
//! updates with a running score accumulator, budget enforcement, and the
//! end-to-end wiring into toy-model decoding.

use std::collections::VecDeque;

use crate::error::{invalid, Result};
use crate::numerics::{sg_softmax, softmax};
use crate::policy::{
    h2o_scores, recent_accum_scores, refine_scores, select_retained, sg_recent_scores,
    sink_retained, value_prior, Policy, PolicyConfig, RetainedSet,
};
use crate::synth::{attention_matrix, causal_logits, dot_product, QkvSet, ScaleMode};
use crate::toy::{argmax_lowest, matvec, mlp, rmsnorm, ToyModel};

/// Retained K/V rows, their original token indices, and the running score
/// accumulator F for one attention head. Rows are kept in ascending index
/// order at all times.
pub struct HeadCacheState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    indices: Vec<usize>,
    scores_f: Vec<f64>,
    /// Sliding window of per-token score rows, recent-accumulation only.
    recent_rows: VecDeque<Vec<f64>>,
    tokens_seen: usize,
    step_t: usize,
    head_dim: usize,
}

impl HeadCacheState {
    pub fn retained(&self) -> &[usize] {
        &self.indices
    }

    pub fn retained_set(&self) -> RetainedSet {
        RetainedSet::new(self.indices.clone()).expect("indices are sorted and unique")
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores_f
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn tokens_seen(&self) -> usize {
        self.tokens_seen
    }

    pub fn step(&self) -> usize {
        self.step_t
    }
}

fn effective_recent(cfg: &PolicyConfig, n: usize) -> usize {
    cfg.recent_budget.min(n).max(1)
}

/// Algorithm state after consuming a full prompt: scores the prompt rows,
/// selects the retained set, gathers K/V, and seeds F.
pub fn prefill(qkv: &QkvSet, cfg: &PolicyConfig) -> Result<HeadCacheState> {
    cfg.validate()?;
    let n = qkv.n;
    if n < 1 {
        return Err(invalid("prefill: empty prompt"));
    }
    let w = causal_logits(&qkv.q, &qkv.k, ScaleMode::ScaledBySqrtD)?;
    let r = effective_recent(cfg, n);

    let (retained, seed_scores): (RetainedSet, Vec<f64>) = match cfg.policy {
        Policy::Full => (RetainedSet::new((0..n).collect())?, vec![0.0; n]),
        Policy::Sink => {
            let recent = cfg.total_budget.saturating_sub(cfg.sink_prefix).max(1);
            (sink_retained(n, cfg.sink_prefix, recent), vec![0.0; n])
        }
        Policy::H2o => {
            let s = h2o_scores(&attention_matrix(&w));
            let ret = select_retained(&s, n, cfg.recent_budget, cfg.selected_budget);
            (ret, s)
        }
        Policy::RecentAccum => {
            let s = recent_accum_scores(&attention_matrix(&w), r)?;
            let ret = select_retained(&s, n, cfg.recent_budget, cfg.selected_budget);
            (ret, s)
        }
        Policy::Aha => {
            let s = sg_recent_scores(&w, r, &cfg.lambda)?;
            let prior = value_prior(&qkv.v, cfg.pool_kernel)?;
            let refined = refine_scores(&s, &prior)?;
            let ret = select_retained(&refined, n, cfg.recent_budget, cfg.selected_budget);
            (ret, refined)
        }
    };

    let mut state = HeadCacheState {
        keys: Vec::with_capacity(retained.len()),
        values: Vec::with_capacity(retained.len()),
        indices: retained.indices().to_vec(),
        scores_f: Vec::with_capacity(retained.len()),
        recent_rows: VecDeque::new(),
        tokens_seen: n,
        step_t: 0,
        head_dim: qkv.d,
    };
    for &idx in retained.indices() {
        state.keys.push(qkv.k[idx].clone());
        state.values.push(qkv.v[idx].clone());
        state.scores_f.push(seed_scores[idx]);
    }
    if cfg.policy == Policy::RecentAccum {
        // seed the sliding window with the last r attention rows, restricted
        // to the retained indices
        let attn = attention_matrix(&w);
        for i in n - r..n {
            let row = attn.row(i);
            let aligned: Vec<f64> = state
                .indices
                .iter()
                .map(|&j| if j <= i { row[j] } else { 0.0 })
                .collect();
            state.recent_rows.push_back(aligned);
        }
    }
    Ok(state)
}

impl HeadCacheState {
    /// Consume one generated token's (q, k, v): append, attend over the
    /// retained set, update F, and evict at most one token if over budget.
    /// Returns the attention output and the evicted index, if any.
    pub fn generation_step(
        &mut self,
        new_q: &[f64],
        new_k: &[f64],
        new_v: &[f64],
        cfg: &PolicyConfig,
    ) -> Result<(Vec<f64>, Option<usize>)> {
        if new_q.len() != self.head_dim || new_k.len() != self.head_dim || new_v.len() != self.head_dim {
            return Err(invalid(format!(
                "generation_step: expected d = {}, got q/k/v lengths {}/{}/{}",
                self.head_dim,
                new_q.len(),
                new_k.len(),
                new_v.len()
            )));
        }
        let new_index = self.tokens_seen;
        self.tokens_seen += 1;
        self.step_t += 1;
        self.indices.push(new_index);
        self.keys.push(new_k.to_vec());
        self.values.push(new_v.to_vec());
        self.scores_f.push(0.0);
        for row in self.recent_rows.iter_mut() {
            row.push(0.0);
        }

        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let logits: Vec<f64> = self.keys.iter().map(|k| dot_product(new_q, k) * scale).collect();

        // the OUTPUT always uses standard softmax; SG-softmax only touches
        // the eviction scores
        let attn = softmax(&logits)?;
        let mut output = vec![0.0; self.head_dim];
        for (&a, v) in attn.iter().zip(&self.values) {
            for (o, &vj) in output.iter_mut().zip(v) {
                *o += a * vj;
            }
        }

        match cfg.policy {
            Policy::Full | Policy::Sink => {}
            Policy::H2o => {
                for (f, &a) in self.scores_f.iter_mut().zip(attn.iter()) {
                    *f += a;
                }
            }
            Policy::RecentAccum => {
                self.recent_rows.push_back(attn.as_slice().to_vec());
                while self.recent_rows.len() > cfg.recent_budget {
                    self.recent_rows.pop_front();
                }
                for f in self.scores_f.iter_mut() {
                    *f = 0.0;
                }
                for row in &self.recent_rows {
                    for (f, &a) in self.scores_f.iter_mut().zip(row) {
                        *f += a;
                    }
                }
            }
            Policy::Aha => {
                // lambda is driven by the original position count, not the
                // retained count
                let lambda = cfg.lambda.lambda_for(self.tokens_seen);
                let sg = sg_softmax(&logits, lambda)?;
                for (f, &a) in self.scores_f.iter_mut().zip(sg.iter()) {
                    *f += a;
                }
            }
        }

        let evicted = self.enforce_budget(cfg);
        Ok((output, evicted))
    }

    fn enforce_budget(&mut self, cfg: &PolicyConfig) -> Option<usize> {
        if cfg.policy == Policy::Full {
            return None;
        }
        let live = self.indices.len();
        let budget = cfg.total_budget;
        if live <= budget {
            return None;
        }
        // one token arrives per step, so at most one eviction is needed
        let victim_pos = match cfg.policy {
            Policy::Full => unreachable!(),
            Policy::Sink => {
                // keep the sink prefix and the (B - prefix) most recent
                let recent = budget.saturating_sub(cfg.sink_prefix).max(1);
                let cutoff = live - recent;
                (0..cutoff).find(|&p| self.indices[p] >= cfg.sink_prefix)
            }
            Policy::H2o | Policy::RecentAccum | Policy::Aha => {
                // min-F among non-recent entries; ties -> lower index
                let recent_start = live - cfg.recent_budget.min(live);
                (0..recent_start).min_by(|&a, &b| {
                    self.scores_f[a].partial_cmp(&self.scores_f[b]).unwrap().then(a.cmp(&b))
                })
            }
        };
        let pos = victim_pos?;
        let evicted = self.indices.remove(pos);
        self.keys.remove(pos);
        self.values.remove(pos);
        self.scores_f.remove(pos);
        for row in self.recent_rows.iter_mut() {
            row.remove(pos);
        }
        Some(evicted)
    }
}

/// One (step, head) trace record. Snapshots feed the bias metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub step: usize,
    pub token: u32,
    pub head_id: usize,
    pub retained: Vec<usize>,
    pub evicted: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationTrace {
    pub records: Vec<TraceRecord>,
}

impl GenerationTrace {
    /// One line per (step, head): step, token, head-id, comma-joined
    /// retained indices, tab-separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let joined: Vec<String> = r.retained.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.step, r.token, r.head_id, joined.join(",")));
        }
        out
    }

    pub fn from_tsv(s: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in s.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(invalid(format!("trace line {lineno}: want 4 fields, got {}", fields.len())));
            }
            let parse = |f: &str| f.parse::<usize>().map_err(|e| invalid(format!("trace line {lineno}: {e}")));
            let retained = if fields[3].is_empty() {
                Vec::new()
            } else {
                fields[3].split(',').map(parse).collect::<Result<_>>()?
            };
            records.push(TraceRecord {
                step: parse(fields[0])?,
                token: fields[1].parse().map_err(|e| invalid(format!("trace line {lineno}: {e}")))?,
                head_id: parse(fields[2])?,
                retained,
                evicted: None,
            });
        }
        Ok(GenerationTrace { records })
    }
}

/// Greedy decode through per-head managed caches. The first emitted token
/// comes from the full-attention prefill logits; every later token flows
/// through [`HeadCacheState::generation_step`], so eviction directly shapes
/// the outputs.
pub fn run_policy_end_to_end(
    model: &ToyModel,
    prompt: &[u32],
    steps: usize,
    cfg: &PolicyConfig,
) -> Result<(Vec<u32>, GenerationTrace)> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(invalid("run_policy_end_to_end: empty prompt"));
    }
    let n = prompt.len();
    let heads = model.cfg.heads;
    let hd = model.cfg.head_dim;
    let d_model = model.cfg.model_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    // ---- prefill: exact full-attention forward, capturing per-head K/V ----
    let mut h: Vec<Vec<f64>> = prompt
        .iter()
        .enumerate()
        .map(|(pos, &t)| model.embed_at(t, pos))
        .collect::<Result<_>>()?;
    let mut states: Vec<HeadCacheState> = Vec::with_capacity(model.cfg.layers * heads);
    for layer in &model.layers {
        let xn: Vec<Vec<f64>> = h.iter().map(|row| rmsnorm(row)).collect();
        let q: Vec<Vec<f64>> = xn.iter().map(|x| matvec(x, &layer.wq)).collect();
        let k: Vec<Vec<f64>> = xn.iter().map(|x| matvec(x, &layer.wk)).collect();
        let v: Vec<Vec<f64>> = xn.iter().map(|x| matvec(x, &layer.wv)).collect();
        for m in 0..heads {
            let slice = |mat: &[Vec<f64>]| -> Vec<Vec<f64>> {
                mat.iter().map(|row| model.head_slice(row, m).to_vec()).collect()
            };
            let qkv = QkvSet { q: slice(&q), k: slice(&k), v: slice(&v), n, d: hd };
            states.push(prefill(&qkv, cfg)?);
        }
        for i in 0..n {
            let mut concat = vec![0.0; d_model];
            for m in 0..heads {
                let logits: Vec<f64> = (0..=i)
                    .map(|j| dot_product(model.head_slice(&q[i], m), model.head_slice(&k[j], m)) * scale)
                    .collect();
                let attn = softmax(&logits)?;
                let out = &mut concat[m * hd..(m + 1) * hd];
                for (j, &a) in attn.iter().enumerate() {
                    for (o, &vj) in out.iter_mut().zip(model.head_slice(&v[j], m)) {
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
    let mut logits = model.output_logits(&h[n - 1]);

    // ---- generation: every K/V read goes through the head caches ----
    let mut emitted = Vec::with_capacity(steps);
    let mut trace = GenerationTrace::default();
    for step in 0..steps {
        let token = argmax_lowest(&logits);
        emitted.push(token);
        let pos = n + step;
        let mut x = model.embed_at(token, pos)?;
        for (l, layer) in model.layers.iter().enumerate() {
            let xn = rmsnorm(&x);
            let q = matvec(&xn, &layer.wq);
            let k = matvec(&xn, &layer.wk);
            let v = matvec(&xn, &layer.wv);
            let mut concat = vec![0.0; d_model];
            for m in 0..heads {
                let head_id = l * heads + m;
                let state = &mut states[head_id];
                let (out, evicted) = state.generation_step(
                    model.head_slice(&q, m),
                    model.head_slice(&k, m),
                    model.head_slice(&v, m),
                    cfg,
                )?;
                concat[m * hd..(m + 1) * hd].copy_from_slice(&out);
                trace.records.push(TraceRecord {
                    step,
                    token,
                    head_id,
                    retained: state.retained().to_vec(),
                    evicted,
                });
            }
            let proj = matvec(&concat, &layer.wo);
            for (xi, p) in x.iter_mut().zip(&proj) {
                *xi += p;
            }
            let m = mlp(&rmsnorm(&x), layer);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
        }
        logits = model.output_logits(&x);
    }
    Ok((emitted, trace))
}

/// Greedy decode under a cache policy, tokens only.
pub fn greedy_decode(
    model: &ToyModel,
    prompt: &[u32],
    steps: usize,
    cfg: &PolicyConfig,
) -> Result<Vec<u32>> {
    run_policy_end_to_end(model, prompt, steps, cfg).map(|(tokens, _)| tokens)
}
