//! Sparse and dense first-stage retrieval plus gold-rank lookup.

mod bm25;
mod dense;
mod persist;
mod tokenize;

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{Bm25Params, InvertedIndex, Posting};
pub use dense::{DenseIndex, Embedder, HashEmbedder};
pub use persist::{IndexFile, IndexHeader, INDEX_FORMAT_VERSION};
pub use tokenize::{tokenize, TokenizerConfig, TruncationLimits};

/// Search depth used for rank lookups unless configured otherwise.
pub const DEFAULT_DEPTH: usize = 100;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("index format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub id: String,
    pub score: f64,
}

/// Retrieval result ordered by score descending, then passage id ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList {
    pub entries: Vec<ScoredPassage>,
}

impl RankedList {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based position of the first passage in `gold`.
    pub fn first_relevant(&self, gold: &BTreeSet<String>) -> RankOutcome {
        RankOutcome(
            self.entries
                .iter()
                .position(|e| gold.contains(&e.id))
                .map(|p| p + 1),
        )
    }
}

/// Rank of the first gold passage, or `None` when it is beyond the search depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankOutcome(pub Option<usize>);

impl RankOutcome {
    pub const ABSENT: RankOutcome = RankOutcome(None);

    pub fn at(rank: usize) -> Self {
        assert!(rank >= 1, "ranks are 1-based");
        RankOutcome(Some(rank))
    }

    pub fn rank(self) -> Option<usize> {
        self.0
    }
}

/// Descending score, ascending id.
pub(crate) fn compare_scored(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Turns per-document scores into the top-`k` list. `ids` must be aligned with `scores`.
pub(crate) fn rank_documents(ids: &[String], scores: &[f64], k: usize) -> RankedList {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let cmp = |&a: &usize, &b: &usize| compare_scored((&ids[a], scores[a]), (&ids[b], scores[b]));
    let k = k.min(order.len());
    if k == 0 {
        return RankedList::default();
    }
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    RankedList {
        entries: order
            .into_iter()
            .map(|d| ScoredPassage {
                id: ids[d].clone(),
                score: scores[d],
            })
            .collect(),
    }
}

/// A first-stage retriever over an immutable index.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError>;
}

impl<R: Retriever + ?Sized> Retriever for &R {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        (**self).retrieve(query, k)
    }
}

impl<R: Retriever + ?Sized> Retriever for Box<R> {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        (**self).retrieve(query, k)
    }
}

impl<R: Retriever + ?Sized> Retriever for std::sync::Arc<R> {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        (**self).retrieve(query, k)
    }
}

/// Position of the first gold passage within the top `depth` results.
pub fn rank_of_gold<R: Retriever + ?Sized>(
    retriever: &R,
    query: &str,
    gold: &BTreeSet<String>,
    depth: usize,
) -> Result<RankOutcome, RetrievalError> {
    if depth == 0 {
        return Err(RetrievalError::Config("search depth must be at least 1".into()));
    }
    Ok(retriever.retrieve(query, depth)?.first_relevant(gold))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<&'static str>);

    impl Retriever for Fixed {
        fn retrieve(&self, _: &str, k: usize) -> Result<RankedList, RetrievalError> {
            Ok(RankedList {
                entries: self
                    .0
                    .iter()
                    .take(k)
                    .enumerate()
                    .map(|(i, id)| ScoredPassage {
                        id: id.to_string(),
                        score: -(i as f64),
                    })
                    .collect(),
            })
        }
    }

    fn gold(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unique_match_is_rank_one() {
        let r = Fixed(vec!["g", "x"]);
        assert_eq!(rank_of_gold(&r, "q", &gold(&["g"]), 100).unwrap(), RankOutcome::at(1));
    }

    #[test]
    fn beyond_depth_is_absent() {
        let ids: Vec<&'static str> = (0..101)
            .map(|i| if i == 100 { "g" } else { Box::leak(format!("d{i}").into_boxed_str()) as &str })
            .collect();
        let r = Fixed(ids);
        assert_eq!(rank_of_gold(&r, "q", &gold(&["g"]), 100).unwrap(), RankOutcome::ABSENT);
        assert_eq!(rank_of_gold(&r, "q", &gold(&["g"]), 101).unwrap(), RankOutcome::at(101));
    }

    #[test]
    fn first_of_several_golds() {
        let r = Fixed(vec!["a", "b", "g2", "c", "d", "e", "g1"]);
        assert_eq!(
            rank_of_gold(&r, "q", &gold(&["g1", "g2"]), 100).unwrap(),
            RankOutcome::at(3)
        );
    }

    #[test]
    fn zero_depth_rejected() {
        assert!(rank_of_gold(&Fixed(vec![]), "q", &gold(&["g"]), 0).is_err());
    }

    #[test]
    fn rank_documents_orders_and_truncates() {
        let ids: Vec<String> = ["c", "a", "b", "d"].iter().map(|s| s.to_string()).collect();
        let scores = [1.0, 2.0, 2.0, 0.5];
        let r = rank_documents(&ids, &scores, 3);
        assert_eq!(r.ids(), vec!["a", "b", "c"]);
        assert_eq!(rank_documents(&ids, &scores, 0).len(), 0);
    }
}
