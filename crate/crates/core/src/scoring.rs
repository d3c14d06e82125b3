//! Scoring one model output end to end: format check, retrieval, reward.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::ParsedOutput;
use crate::format::parse_output;
use crate::retrieval::{rank_of_gold, RankOutcome, Retriever};
use crate::reward::RewardConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutput {
    pub parsed: ParsedOutput,
    pub rank: RankOutcome,
    pub reward: f64,
    /// Set when retrieval failed; the output is then scored as rank-absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_error: Option<String>,
}

/// Format-invalid outputs get the penalty without touching the retriever.
pub fn score_output<R: Retriever + ?Sized>(
    retriever: &R,
    output: &str,
    gold: &BTreeSet<String>,
    depth: usize,
    reward: &RewardConfig,
) -> ScoredOutput {
    let parsed = parse_output(output);
    if !parsed.valid {
        return ScoredOutput {
            parsed,
            rank: RankOutcome::ABSENT,
            reward: reward.full_reward(RankOutcome::ABSENT, false),
            retrieval_error: None,
        };
    }
    let (rank, retrieval_error) = match rank_of_gold(retriever, &parsed.rewrite, gold, depth) {
        Ok(r) => (r, None),
        Err(e) => {
            tracing::warn!(error = %e, "retrieval failed; scoring rollout as rank-absent");
            (RankOutcome::ABSENT, Some(e.to_string()))
        }
    };
    ScoredOutput {
        parsed,
        rank,
        reward: reward.full_reward(rank, true),
        retrieval_error,
    }
}
