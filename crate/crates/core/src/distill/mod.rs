//! Self-distillation of warm-up data: generate, keep format-valid outputs,
//! keep rewrites that put a gold passage at rank 1.

mod generator;
mod remote;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generator::*;
pub use remote::*;

use crate::data::{save_sd_data, DataError, ParsedOutput, QueryInstance, SdSample};
use crate::format::{parse_output, PromptTemplate};
use crate::retrieval::{rank_of_gold, RankOutcome, Retriever, DEFAULT_DEPTH};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn stage(stage: &'static str, e: impl ToString) -> DistillError {
    DistillError::Stage {
        stage,
        message: e.to_string(),
    }
}

/// One generated output, keyed by instance and sample index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub instance: QueryInstance,
    pub sample: usize,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generations {
    pub outputs: Vec<RawOutput>,
    /// Keys of instances whose generation failed after retries.
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatValid {
    pub raw: RawOutput,
    pub parsed: ParsedOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dedupe {
    /// Keep every rank-1 output.
    #[default]
    None,
    /// Keep the lowest sample index per instance.
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub samples_per_instance: usize,
    pub temperature: f64,
    /// Maximum concurrent generation requests.
    pub max_in_flight: usize,
    pub search_depth: usize,
    pub dedupe: Dedupe,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            samples_per_instance: 1,
            temperature: 0.7,
            max_in_flight: 4,
            search_depth: DEFAULT_DEPTH,
            dedupe: Dedupe::None,
        }
    }
}

/// Stage counts and drop reasons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub instances: usize,
    pub failed_instances: usize,
    pub transport_failure_rate: f64,
    pub generated: usize,
    pub format_valid: usize,
    pub retained: usize,
    pub dropped: BTreeMap<String, usize>,
}

/// Few-shot prompts every instance and collects `samples_per_instance` outputs each.
pub fn self_distill<G: Generator + ?Sized>(
    instances: &[QueryInstance],
    generator: &G,
    examples: &[&str],
    cfg: &DistillConfig,
) -> Result<Generations, DistillError> {
    if cfg.samples_per_instance == 0 || cfg.max_in_flight == 0 {
        return Err(stage("generate", "samples_per_instance and max_in_flight must be positive"));
    }
    let template = PromptTemplate::few_shot();
    let prompts = instances
        .iter()
        .map(|i| template.render(&i.history, &i.current_query, examples))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| stage("generate", e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| stage("generate", e))?;
    let n = cfg.samples_per_instance;
    let results: Vec<Result<Vec<String>, GenerateError>> = pool.install(|| {
        prompts
            .par_iter()
            .map(|p| generator.generate(p, n, cfg.temperature))
            .collect()
    });
    let mut out = Generations {
        outputs: Vec::new(),
        failed: Vec::new(),
    };
    for (inst, res) in instances.iter().zip(results) {
        match res {
            Ok(mut texts) => {
                texts.resize(n, String::new());
                tracing::debug!(instance = %inst.key(), samples = n, "generated");
                out.outputs.extend(texts.into_iter().enumerate().map(|(sample, output)| RawOutput {
                    instance: inst.clone(),
                    sample,
                    output,
                }));
            }
            Err(e) => {
                tracing::warn!(instance = %inst.key(), error = %e, "generation failed");
                out.failed.push(inst.key());
            }
        }
    }
    Ok(out)
}

/// Outputs whose format validates, with their parsed fields.
pub fn filter_format(outputs: &[RawOutput]) -> Vec<FormatValid> {
    outputs
        .iter()
        .filter_map(|raw| {
            let parsed = parse_output(&raw.output);
            parsed.valid.then(|| FormatValid {
                raw: raw.clone(),
                parsed,
            })
        })
        .collect()
}

/// Result of the rank-1 filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rank1Outcome {
    pub samples: Vec<SdSample>,
    pub not_rank1: usize,
    pub retrieval_errors: usize,
    pub duplicates: usize,
}

/// Keeps format-valid outputs whose rewrite retrieves a gold passage at rank 1.
pub fn filter_rank1<R: Retriever + ?Sized>(
    valid: &[FormatValid],
    retriever: &R,
    depth: usize,
    dedupe: Dedupe,
) -> Rank1Outcome {
    let ranks: Vec<Option<RankOutcome>> = valid
        .par_iter()
        .map(|v| match rank_of_gold(retriever, &v.parsed.rewrite, &v.raw.instance.gold_passage_ids, depth) {
            Ok(r) => Some(r),
            Err(e) => {
                tracing::warn!(instance = %v.raw.instance.key(), error = %e, "retrieval failed during rank-1 filter");
                None
            }
        })
        .collect();
    let mut out = Rank1Outcome {
        samples: Vec::new(),
        not_rank1: 0,
        retrieval_errors: 0,
        duplicates: 0,
    };
    let mut kept_keys: Vec<String> = Vec::new();
    for (v, rank) in valid.iter().zip(ranks) {
        match rank {
            None => out.retrieval_errors += 1,
            Some(r) if r.rank() != Some(1) => out.not_rank1 += 1,
            Some(_) => {
                let key = v.raw.instance.key();
                if dedupe == Dedupe::First && kept_keys.contains(&key) {
                    out.duplicates += 1;
                    continue;
                }
                kept_keys.push(key);
                out.samples.push(SdSample::new(
                    v.raw.instance.history.clone(),
                    v.raw.instance.current_query.clone(),
                    v.parsed.reasoning.clone(),
                    v.parsed.rewrite.clone(),
                ));
            }
        }
    }
    out
}

/// The source instance of a sample, when exactly one matches its context and query.
pub fn source_instance<'a>(sample: &SdSample, instances: &'a [QueryInstance]) -> Option<&'a QueryInstance> {
    let mut hits = instances
        .iter()
        .filter(|i| i.history == sample.context && i.current_query == sample.query);
    let first = hits.next()?;
    hits.next().is_none().then_some(first)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpwuOutput {
    pub generations: Generations,
    pub samples: Vec<SdSample>,
    pub report: DistillReport,
}

/// Filters already-generated outputs and assembles the report.
pub fn filter_generations<R: Retriever + ?Sized>(
    instances: usize,
    generations: Generations,
    retriever: &R,
    cfg: &DistillConfig,
) -> SdpwuOutput {
    let valid = filter_format(&generations.outputs);
    let r1 = filter_rank1(&valid, retriever, cfg.search_depth, cfg.dedupe);
    let mut dropped = BTreeMap::new();
    dropped.insert("transport".to_string(), generations.failed.len());
    dropped.insert("format".to_string(), generations.outputs.len() - valid.len());
    dropped.insert("not_rank1".to_string(), r1.not_rank1);
    dropped.insert("retrieval_error".to_string(), r1.retrieval_errors);
    dropped.insert("duplicate".to_string(), r1.duplicates);
    let report = DistillReport {
        instances,
        failed_instances: generations.failed.len(),
        transport_failure_rate: if instances == 0 {
            0.0
        } else {
            generations.failed.len() as f64 / instances as f64
        },
        generated: generations.outputs.len(),
        format_valid: valid.len(),
        retained: r1.samples.len(),
        dropped,
    };
    SdpwuOutput {
        generations,
        samples: r1.samples,
        report,
    }
}

/// Generation, format filter and rank-1 filter in sequence.
pub fn run_sdpwu<G, R>(
    instances: &[QueryInstance],
    generator: &G,
    examples: &[&str],
    retriever: &R,
    cfg: &DistillConfig,
) -> Result<SdpwuOutput, DistillError>
where
    G: Generator + ?Sized,
    R: Retriever + ?Sized,
{
    if examples.is_empty() {
        return Err(stage("generate", "at least one few-shot example is required"));
    }
    let generations = self_distill(instances, generator, examples, cfg)?;
    Ok(filter_generations(instances.len(), generations, retriever, cfg))
}

pub fn save_generations(outputs: &[RawOutput], path: &Path) -> Result<(), DistillError> {
    let mut body = String::new();
    for o in outputs {
        body.push_str(&serde_json::to_string(o).map_err(|e| stage("persist", e))?);
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| stage("persist", format!("{}: {e}", path.display())))
}

pub fn load_generations(path: &Path) -> Result<Vec<RawOutput>, DistillError> {
    let text = std::fs::read_to_string(path).map_err(|e| stage("load", format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| stage("load", format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

/// Writes `generations.jsonl`, `sd_data.jsonl` and `report.json` into `dir`.
pub fn save_sdpwu(output: &SdpwuOutput, dir: &Path) -> Result<(), DistillError> {
    std::fs::create_dir_all(dir).map_err(|e| stage("persist", format!("{}: {e}", dir.display())))?;
    save_generations(&output.generations.outputs, &dir.join("generations.jsonl"))?;
    save_sd_data(&output.samples, &dir.join("sd_data.jsonl"))?;
    let report = serde_json::to_string_pretty(&output.report).map_err(|e| stage("persist", e))?;
    std::fs::write(dir.join("report.json"), report + "\n").map_err(|e| stage("persist", e))
}
