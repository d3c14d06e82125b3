//! The two-stage run on a toy policy: self-distilled warm-up, then GRPO.
//! `run_ablation` also trains and evaluates the single-stage arms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::QueryInstance;
use crate::distill::{run_sdpwu, DistillConfig, DistillError, DistillReport, Generator, SdpwuOutput};
use crate::format::DEFAULT_EXAMPLE;
use crate::grpo::{
    action_table, evaluate_policy, qrels_for, mle_warmup, raw_run, run_metrics, train, GrpoError, PolicyEval, StepLog, ToyPolicy,
    TrainConfig, WarmupReport,
};
use crate::metrics::{mrr_at_k, MetricReport};
use crate::retrieval::Retriever;
use crate::reward::RewardConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("distill: {0}")]
    Distill(#[from] DistillError),
    #[error("grpo: {0}")]
    Grpo(#[from] GrpoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub buckets: usize,
    pub distill: DistillConfig,
    pub train: TrainConfig,
    pub reward: RewardConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            buckets: 32,
            distill: DistillConfig {
                samples_per_instance: 4,
                ..DistillConfig::default()
            },
            train: TrainConfig {
                batch_size: 16,
                learning_rate: 1.0,
                epochs: 10,
                max_steps: Some(200),
                ..TrainConfig::default()
            },
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub policy: ToyPolicy,
    pub distilled: SdpwuOutput,
    pub warmup: WarmupReport,
}

/// Stage 1: self-distill with the few-shot prompt, keep rank-1 rewrites, fit the toy policy.
pub fn warm_start<G, R>(
    instances: &[QueryInstance],
    generator: &G,
    retriever: &R,
    cfg: &PipelineConfig,
) -> Result<WarmStart, PipelineError>
where
    G: Generator + ?Sized,
    R: Retriever + ?Sized,
{
    let distilled = run_sdpwu(instances, generator, &[DEFAULT_EXAMPLE], retriever, &cfg.distill)?;
    let (policy, warmup) = mle_warmup(&ToyPolicy::uniform(cfg.buckets), &distilled.samples);
    Ok(WarmStart {
        policy,
        distilled,
        warmup,
    })
}

/// Stage 2 from `start`, with `start` frozen as the KL reference.
pub fn reinforce<R: Retriever + ?Sized>(
    start: &ToyPolicy,
    instances: &[QueryInstance],
    retriever: &R,
    cfg: &PipelineConfig,
) -> Result<(ToyPolicy, Vec<StepLog>), PipelineError> {
    let reference = start.clone();
    let mut policy = start.clone();
    let logs = train(&mut policy, &reference, instances, retriever, &cfg.reward, &cfg.train, |_, _| {})?;
    Ok((policy, logs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub raw: MetricReport,
    /// Fraction of raw queries whose first result is relevant.
    pub raw_rank1_rate: f64,
    pub warmup_only: PolicyEval,
    pub rl_only: PolicyEval,
    pub full: PolicyEval,
    pub distill: DistillReport,
    pub warmup: WarmupReport,
    pub rl_only_log: Vec<StepLog>,
    pub full_log: Vec<StepLog>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut s = String::from("arm            MRR@3   rank1\n");
        s.push_str(&format!("{:<14} {:.4}  {:.4}\n", "raw", self.raw.mrr3, self.raw_rank1_rate));
        for (name, e) in [("warm-up only", &self.warmup_only), ("rl only", &self.rl_only), ("warm-up + rl", &self.full)] {
            s.push_str(&format!("{name:<14} {:.4}  {:.4}\n", e.expected_mrr3, e.expected_rank1_rate));
        }
        s
    }
}

/// Raw queries, warm-up only, RL from the uniform policy, and warm-up followed by RL.
/// Policies are scored by their exact expected metrics at the training temperature.
pub fn run_ablation<G, R>(
    instances: &[QueryInstance],
    generator: &G,
    retriever: &R,
    cfg: &PipelineConfig,
) -> Result<AblationReport, PipelineError>
where
    G: Generator + ?Sized,
    R: Retriever + ?Sized,
{
    let depth = cfg.train.search_depth;
    let run = raw_run(instances, retriever, depth)?;
    let raw = run_metrics(&run, instances)?;
    let raw_rank1_rate = mrr_at_k(&run, &qrels_for(instances), 1).map_err(GrpoError::from)?;
    let uniform = ToyPolicy::uniform(cfg.buckets);
    let table = action_table(&uniform, instances, retriever, depth)?;
    let t = cfg.train.temperature;

    let ws = warm_start(instances, generator, retriever, cfg)?;
    let warmup_only = evaluate_policy(&ws.policy, instances, &table, t)?;
    let (rl_policy, rl_only_log) = reinforce(&uniform, instances, retriever, cfg)?;
    let rl_only = evaluate_policy(&rl_policy, instances, &table, t)?;
    let (full_policy, full_log) = reinforce(&ws.policy, instances, retriever, cfg)?;
    let full = evaluate_policy(&full_policy, instances, &table, t)?;
    Ok(AblationReport {
        raw,
        raw_rank1_rate,
        warmup_only,
        rl_only,
        full,
        distill: ws.distilled.report,
        warmup: ws.warmup,
        rl_only_log,
        full_log,
    })
}
