//! Retrieval evaluation of rewrite policies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::CategoricalPolicy;
use super::GrpoError;
use crate::data::QueryInstance;
use crate::format::parse_output;
use crate::metrics::{MetricReport, Qrels, Run};
use crate::retrieval::{RankOutcome, RankedList, Retriever};

pub fn qrels_for(instances: &[QueryInstance]) -> Qrels {
    instances.iter().map(|i| (i.key(), i.gold_passage_ids.clone())).collect()
}

/// Retrieves with the raw current query.
pub fn raw_run<R: Retriever + ?Sized>(instances: &[QueryInstance], retriever: &R, depth: usize) -> Result<Run, GrpoError> {
    instances
        .par_iter()
        .map(|i| Ok((i.key(), retriever.retrieve(&i.current_query, depth)?)))
        .collect()
}

/// Retrieves with each instance's greedy rewrite; format-invalid outputs get an empty ranking.
pub fn greedy_run<P, R>(policy: &P, instances: &[QueryInstance], retriever: &R, depth: usize) -> Result<Run, GrpoError>
where
    P: CategoricalPolicy + Sync,
    R: Retriever + ?Sized,
{
    instances
        .par_iter()
        .map(|i| {
            let parsed = parse_output(&policy.render(i, policy.greedy(i)));
            let list = if parsed.valid {
                retriever.retrieve(&parsed.rewrite, depth)?
            } else {
                RankedList::default()
            };
            Ok((i.key(), list))
        })
        .collect()
}

/// Gold rank of every action's output for every instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTable {
    pub ranks: Vec<Vec<RankOutcome>>,
    pub format_ok: Vec<Vec<bool>>,
}

pub fn action_table<P, R>(policy: &P, instances: &[QueryInstance], retriever: &R, depth: usize) -> Result<ActionTable, GrpoError>
where
    P: CategoricalPolicy + Sync,
    R: Retriever + ?Sized,
{
    let rows: Vec<(Vec<RankOutcome>, Vec<bool>)> = instances
        .par_iter()
        .map(|i| {
            let mut ranks = Vec::with_capacity(policy.num_actions());
            let mut ok = Vec::with_capacity(policy.num_actions());
            for a in 0..policy.num_actions() {
                let parsed = parse_output(&policy.render(i, a));
                ranks.push(if parsed.valid {
                    retriever.retrieve(&parsed.rewrite, depth)?.first_relevant(&i.gold_passage_ids)
                } else {
                    RankOutcome::ABSENT
                });
                ok.push(parsed.valid);
            }
            Ok((ranks, ok))
        })
        .collect::<Result<_, GrpoError>>()?;
    let (ranks, format_ok) = rows.into_iter().unzip();
    Ok(ActionTable { ranks, format_ok })
}

/// Metrics of a stochastic policy, exact in expectation over its sampling distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub expected_mrr3: f64,
    pub expected_rank1_rate: f64,
    pub expected_format_rate: f64,
    pub greedy_mrr3: f64,
    pub greedy_rank1_rate: f64,
}

pub fn evaluate_policy<P: CategoricalPolicy>(
    policy: &P,
    instances: &[QueryInstance],
    table: &ActionTable,
    temperature: f64,
) -> Result<PolicyEval, GrpoError> {
    if instances.is_empty() || table.ranks.len() != instances.len() {
        return Err(GrpoError::Invariant(format!(
            "{} instances but {} action-table rows",
            instances.len(),
            table.ranks.len()
        )));
    }
    let rr3 = |r: RankOutcome| match r.rank() {
        Some(k) if k <= 3 => 1.0 / k as f64,
        _ => 0.0,
    };
    let top1 = |r: RankOutcome| (r.rank() == Some(1)) as u8 as f64;
    let mut e = PolicyEval {
        expected_mrr3: 0.0,
        expected_rank1_rate: 0.0,
        expected_format_rate: 0.0,
        greedy_mrr3: 0.0,
        greedy_rank1_rate: 0.0,
    };
    for ((inst, ranks), ok) in instances.iter().zip(&table.ranks).zip(&table.format_ok) {
        let probs: Vec<f64> = policy.log_probs(inst, temperature).iter().map(|l| l.exp()).collect();
        for (a, p) in probs.iter().enumerate() {
            e.expected_mrr3 += p * rr3(ranks[a]);
            e.expected_rank1_rate += p * top1(ranks[a]);
            e.expected_format_rate += p * ok[a] as u8 as f64;
        }
        let g = policy.greedy(inst);
        e.greedy_mrr3 += rr3(ranks[g]);
        e.greedy_rank1_rate += top1(ranks[g]);
    }
    let n = instances.len() as f64;
    e.expected_mrr3 /= n;
    e.expected_rank1_rate /= n;
    e.expected_format_rate /= n;
    e.greedy_mrr3 /= n;
    e.greedy_rank1_rate /= n;
    Ok(e)
}

/// Standard metric table of a run against the instances' gold labels.
pub fn run_metrics(run: &Run, instances: &[QueryInstance]) -> Result<MetricReport, GrpoError> {
    Ok(MetricReport::compute(run, &qrels_for(instances))?)
}
