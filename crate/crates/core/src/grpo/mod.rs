//! Group relative policy optimization over categorical rewrite policies.

mod eval;
mod loss;
mod policy;
mod train;
mod warmup;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::*;
pub use loss::*;
pub use policy::*;
pub use train::*;
pub use warmup::*;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error(transparent)]
    Eval(#[from] crate::metrics::EvalError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub temperature: f64,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
    /// Linear learning-rate warmup length; 0 disables it.
    pub lr_warmup_steps: usize,
    pub std_eps: f64,
    pub seed: u64,
    pub search_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            temperature: 0.7,
            clip_eps: 0.2,
            kl_coef: 0.001,
            batch_size: 16,
            learning_rate: 1.0,
            epochs: 1,
            max_steps: None,
            lr_warmup_steps: 0,
            std_eps: 1e-6,
            seed: 0,
            search_depth: crate::retrieval::DEFAULT_DEPTH,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.into()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.kl_coef >= 0.0) {
            return bad("kl_coef must be non-negative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.search_depth == 0 {
            return bad("batch_size, epochs and search_depth must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.std_eps > 0.0) {
            return bad("learning_rate and std_eps must be positive");
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            clip_eps: self.clip_eps,
            kl_coef: self.kl_coef,
            temperature: self.temperature,
        }
    }

    /// Step size for update `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.lr_warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * ((step + 1) as f64 / self.lr_warmup_steps as f64).min(1.0)
        }
    }
}

/// `(R_i - mean) / (std + std_eps)` with the population standard deviation.
pub fn compute_advantages(rewards: &[f64], std_eps: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::Config(format!(
            "advantage normalization needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    // A rounded mean would leave a tiny residual that the eps divisor amplifies.
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + std_eps)).collect())
}
