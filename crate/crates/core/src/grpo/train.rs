//! The GRPO training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::{grpo_loss_and_grad, GroupRollout};
use super::policy::TrainablePolicy;
use super::{compute_advantages, GrpoError, TrainConfig};
use crate::data::QueryInstance;
use crate::retrieval::{RankOutcome, Retriever};
use crate::reward::RewardConfig;
use crate::scoring::score_output;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mean_reward: f64,
    pub format_rate: f64,
    pub rank1_rate: f64,
    pub kl: f64,
    pub loss: f64,
}

/// Runs GRPO updates in place. `on_step` sees each step's log and scored groups.
pub fn train<P, R>(
    policy: &mut P,
    reference: &P,
    instances: &[QueryInstance],
    retriever: &R,
    reward: &RewardConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &[GroupRollout]),
) -> Result<Vec<StepLog>, GrpoError>
where
    P: TrainablePolicy,
    R: Retriever + ?Sized,
{
    cfg.validate()?;
    reward.validate().map_err(|e| GrpoError::Config(e.to_string()))?;
    if instances.is_empty() {
        return Err(GrpoError::Config("no training instances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::new();
    let mut order: Vec<usize> = (0..instances.len()).collect();
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| logs.len() >= m) {
                break 'epochs;
            }
            let step = logs.len();
            let groups = rollout(policy, instances, batch, retriever, reward, cfg, &mut rng)?;
            let (out, grad) = grpo_loss_and_grad(policy, reference, &groups, &cfg.loss_config())?;
            let lr = cfg.lr_at(step);
            for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            let total = (groups.len() * cfg.group_size) as f64;
            let log = StepLog {
                step,
                mean_reward: groups.iter().flat_map(|g| &g.rewards).sum::<f64>() / total,
                format_rate: count(&groups, |g, i| crate::format::validate(&g.rewrites[i]) == 1) / total,
                rank1_rate: count(&groups, |g, i| g.ranks[i].rank() == Some(1)) / total,
                kl: out.kl,
                loss: out.loss,
            };
            tracing::debug!(step, mean_reward = log.mean_reward, rank1 = log.rank1_rate, "grpo step");
            on_step(&log, &groups);
            logs.push(log);
        }
    }
    Ok(logs)
}

fn count(groups: &[GroupRollout], f: impl Fn(&GroupRollout, usize) -> bool) -> f64 {
    groups.iter().map(|g| (0..g.actions.len()).filter(|&i| f(g, i)).count()).sum::<usize>() as f64
}

/// Samples `group_size` actions per instance from the current (old) policy and scores them.
fn rollout<P, R>(
    policy: &P,
    instances: &[QueryInstance],
    batch: &[usize],
    retriever: &R,
    reward: &RewardConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GroupRollout>, GrpoError>
where
    P: TrainablePolicy,
    R: Retriever + ?Sized,
{
    let mut groups: Vec<GroupRollout> = batch
        .iter()
        .map(|&idx| {
            let inst = &instances[idx];
            let lp = policy.log_probs(inst, cfg.temperature);
            let actions = policy.sample(inst, cfg.group_size, cfg.temperature, rng);
            GroupRollout {
                old_log_probs: actions.iter().map(|&a| lp[a]).collect(),
                rewrites: actions.iter().map(|&a| policy.render(inst, a)).collect(),
                instance: inst.clone(),
                actions,
                rewards: Vec::new(),
                advantages: Vec::new(),
                ranks: Vec::new(),
            }
        })
        .collect();
    let scored: Vec<Vec<(f64, RankOutcome)>> = groups
        .par_iter()
        .map(|g| {
            g.rewrites
                .iter()
                .map(|out| {
                    let s = score_output(retriever, out, &g.instance.gold_passage_ids, cfg.search_depth, reward);
                    (s.reward, s.rank)
                })
                .collect()
        })
        .collect();
    for (g, s) in groups.iter_mut().zip(scored) {
        (g.rewards, g.ranks) = s.into_iter().unzip();
        g.advantages = compute_advantages(&g.rewards, cfg.std_eps)?;
    }
    Ok(groups)
}

pub fn write_log_jsonl(logs: &[StepLog], path: &Path) -> Result<(), GrpoError> {
    let io = |e: std::io::Error| GrpoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for l in logs {
        writeln!(f, "{}", serde_json::to_string(l).expect("step log serializes")).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Serialized policy parameters tagged with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<P> {
    pub config_fingerprint: String,
    pub policy: P,
}

/// SHA-256 of the canonical JSON of a configuration value.
pub fn config_fingerprint<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

impl<P: Serialize + DeserializeOwned> Checkpoint<P> {
    pub fn save(&self, path: &Path) -> Result<(), GrpoError> {
        let body = serde_json::to_vec_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, body).map_err(|e| GrpoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, GrpoError> {
        let io = |m: String| GrpoError::Io {
            path: path.display().to_string(),
            message: m,
        };
        let bytes = std::fs::read(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| io(e.to_string()))
    }
}
