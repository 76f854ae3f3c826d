//! Experiment configuration: a TOML file of key-value settings, with
//! command-line flags taking precedence. Unknown keys are rejected so a
//! config file always means what it says.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // synthetic instance
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub trials: usize,
    pub seed: u64,
    pub seeds: usize,

    // policy / budget
    pub budget: usize,
    pub recent_budget: usize,
    pub pool_kernel: usize,
    pub policies: Vec<String>,

    // entropy verification
    pub i_values: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub calib_k: usize,
    pub lognormal_trials: usize,

    // toy model
    pub vocab: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_mult: usize,
    pub prompt_len: usize,
    pub steps: usize,

    // sparsity sweep
    pub threshold_count: usize,

    // output
    pub out: String,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 512,
            d: 64,
            r: 32,
            trials: 200,
            seed: 42,
            seeds: 50,
            budget: 256,
            recent_budget: 32,
            pool_kernel: 7,
            policies: vec![
                "full".into(),
                "sink".into(),
                "h2o".into(),
                "recent_accum".into(),
                "aha".into(),
            ],
            i_values: vec![256, 1024],
            lambdas: vec![0.0, 1.0],
            calib_k: 64,
            lognormal_trials: 1_000_000,
            vocab: 64,
            layers: 2,
            heads: 2,
            head_dim: 8,
            mlp_mult: 2,
            prompt_len: 64,
            steps: 16,
            threshold_count: 21,
            out: "ahakv-out".into(),
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// The fully resolved settings, re-emitted next to every result file so
    /// a run is reproducible from its outputs alone.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
