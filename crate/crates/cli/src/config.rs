//! Layered TOML configuration: built-in defaults, then the config file, then
//! command-line overrides. Unknown keys are rejected at every layer.

use std::path::{Path, PathBuf};

use convsearch_core::distill::{DistillConfig, RemoteGeneratorConfig};
use convsearch_core::grpo::TrainConfig;
use convsearch_core::pipeline::PipelineConfig;
use convsearch_core::retrieval::{Bm25Params, TokenizerConfig, TruncationLimits};
use convsearch_core::reward::RewardConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub paths: Paths,
    pub retrieval: RetrievalConfig,
    pub reward: RewardConfig,
    pub distill: DistillConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub generator: GeneratorConfig,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        Config {
            paths: Paths::default(),
            retrieval: RetrievalConfig::default(),
            reward: pipeline.reward,
            distill: pipeline.distill,
            train: pipeline.train,
            policy: PolicyConfig { buckets: pipeline.buckets },
            generator: GeneratorConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

/// Artifact locations. Relative paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub sessions: PathBuf,
    pub instances: PathBuf,
    pub index: PathBuf,
    /// Holds `generations.jsonl`, `sd_data.jsonl` and `report.json`.
    pub distill_dir: PathBuf,
    pub warmup_policy: PathBuf,
    pub policy: PathBuf,
    pub logs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "data/corpus.jsonl".into(),
            sessions: "data/sessions.jsonl".into(),
            instances: "artifacts/instances.jsonl".into(),
            index: "artifacts/index.json".into(),
            distill_dir: "artifacts/distill".into(),
            warmup_policy: "artifacts/warmup_policy.json".into(),
            policy: "artifacts/policy.json".into(),
            logs: "artifacts/logs".into(),
        }
    }
}

impl Paths {
    pub fn sd_data(&self) -> PathBuf {
        self.distill_dir.join("sd_data.jsonl")
    }

    pub fn train_log(&self) -> PathBuf {
        self.logs.join("train_log.jsonl")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub tokenizer: TokenizerConfig,
    pub limits: TruncationLimits,
    pub bm25: Bm25Params,
    pub dense: DenseConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            tokenizer: TokenizerConfig::default(),
            limits: TruncationLimits::default(),
            bm25: Bm25Params::default(),
            dense: DenseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseConfig {
    /// Also build the hashed dense index.
    pub enabled: bool,
    pub dim: usize,
    pub seed: u64,
}

impl Default for DenseConfig {
    fn default() -> Self {
        DenseConfig {
            enabled: true,
            dim: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub buckets: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { buckets: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Offline template generator.
    Template,
    /// Chat-completions endpoint under `generator.remote`.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    /// Template generator seed.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteGeneratorConfig>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: GeneratorKind::Template,
            seed: 7,
            remote: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Depth used when a request omits one.
    pub default_depth: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            default_depth: 100,
        }
    }
}

impl Config {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            buckets: self.policy.buckets,
            distill: self.distill.clone(),
            train: self.train.clone(),
            reward: self.reward,
        }
    }

    /// Defaults, overlaid with the file at `path` (if any), overlaid with `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<Config, CliError> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                Some(
                    text.parse::<toml::Table>()
                        .map_err(|e| CliError::Usage(format!("config {}: {}", p.display(), one_line(&e.to_string()))))?,
                )
            }
            None => None,
        };
        Config::layered(file, overrides)
    }

    pub fn layered(file: Option<toml::Table>, overrides: &[Override]) -> Result<Config, CliError> {
        let mut table = toml::Table::try_from(Config::default()).expect("default config serializes");
        if let Some(f) = file {
            merge(&mut table, f);
        }
        for o in overrides {
            o.apply(&mut table)?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid config: {}", one_line(&e.to_string()))))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: String| CliError::Usage(e);
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        self.reward.validate().map_err(|e| usage(e.to_string()))?;
        self.retrieval.bm25.validate().map_err(|e| usage(e.to_string()))?;
        if self.policy.buckets == 0 {
            return Err(usage("policy.buckets must be positive".into()));
        }
        if self.retrieval.dense.enabled && self.retrieval.dense.dim == 0 {
            return Err(usage("retrieval.dense.dim must be positive".into()));
        }
        if self.generator.kind == GeneratorKind::Remote && self.generator.remote.is_none() {
            return Err(usage("generator.kind = \"remote\" needs a [generator.remote] table".into()));
        }
        Ok(())
    }

    /// Effective configuration as one JSON line. The generator token lives in an
    /// environment variable and never enters the config; only its name is shown.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub(crate) fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A `dotted.key=value` override. Values parse as TOML, falling back to a bare string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: Vec<String>,
    pub value: toml::Value,
}

impl Override {
    pub fn new(key: &str, value: toml::Value) -> Self {
        Override {
            key: key.split('.').map(str::to_string).collect(),
            value,
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {s:?} is not key=value")))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(CliError::Usage(format!("override {s:?} has an empty key")));
        }
        let value = format!("v = {}", raw.trim())
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        Ok(Override::new(key, value))
    }

    fn apply(&self, table: &mut toml::Table) -> Result<(), CliError> {
        let (last, parents) = self.key.split_last().expect("key is non-empty");
        let mut cur = table;
        for p in parents {
            let entry = cur
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Usage(format!("override {}: {p} is not a table", self.key.join("."))))?;
        }
        cur.insert(last.clone(), self.value.clone());
        Ok(())
    }
}
