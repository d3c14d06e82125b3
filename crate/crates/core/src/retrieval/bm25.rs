//! Okapi BM25 over an in-memory inverted index.
//!
//! Scoring uses the non-negative IDF `ln((N - df + 0.5) / (df + 0.5) + 1)`.
//! Every query token occurrence contributes, in query order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, TokenizerConfig, TruncationLimits};
use super::{rank_documents, RankedList, RetrievalError, Retriever};
use crate::data::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    pub const TOPIOCQA: Bm25Params = Bm25Params { k1: 0.9, b: 0.4 };
    pub const QRECC: Bm25Params = Bm25Params { k1: 0.82, b: 0.68 };

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::Config(format!(
                "invalid BM25 parameters k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params::TOPIOCQA
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub tokenizer: TokenizerConfig,
    pub limits: TruncationLimits,
    pub params: Bm25Params,
    /// Ordinal → passage id, ascending id order.
    pub ids: Vec<String>,
    pub doc_len: Vec<u32>,
    pub avgdl: f64,
    /// term → postings sorted by ordinal
    pub postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    pub fn build(
        corpus: &Corpus,
        tokenizer: TokenizerConfig,
        limits: TruncationLimits,
        params: Bm25Params,
    ) -> Result<Self, RetrievalError> {
        if corpus.is_empty() {
            return Err(RetrievalError::Config("cannot index an empty corpus".into()));
        }
        params.validate()?;
        let docs: Vec<_> = corpus.values().collect();
        let analyzed: Vec<Vec<String>> = docs
            .par_iter()
            .map(|p| tokenize(&p.text, &tokenizer, limits.passage_tokens))
            .collect();

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (ordinal, tokens) in analyzed.iter().enumerate() {
            doc_len.push(tokens.len() as u32);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / docs.len() as f64;
        Ok(InvertedIndex {
            tokenizer,
            limits,
            params,
            ids: docs.iter().map(|p| p.id.clone()).collect(),
            doc_len,
            avgdl,
            postings,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_weight(&self, idf: f64, tf: f64, dl: f64) -> f64 {
        let Bm25Params { k1, b } = self.params;
        idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / self.avgdl))
    }

    pub fn query_tokens(&self, query: &str) -> Vec<String> {
        tokenize(query, &self.tokenizer, self.limits.query_tokens)
    }

    /// Score of one document (by ordinal) for already-analyzed query tokens.
    pub fn score(&self, query_tokens: &[String], doc: usize) -> f64 {
        let dl = self.doc_len[doc] as f64;
        let mut score = 0.0;
        for term in query_tokens {
            let Some(list) = self.postings.get(term) else { continue };
            if let Ok(pos) = list.binary_search_by_key(&(doc as u32), |p| p.doc) {
                score += self.term_weight(self.idf(term), list[pos].tf as f64, dl);
            }
        }
        score
    }

    /// Scores for every document, accumulated term-at-a-time over the postings.
    pub fn score_all(&self, query_tokens: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_docs()];
        for term in query_tokens {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for p in list {
                let d = p.doc as usize;
                scores[d] += self.term_weight(idf, p.tf as f64, self.doc_len[d] as f64);
            }
        }
        scores
    }

    pub fn retrieve_topk(&self, query: &str, k: usize) -> RankedList {
        let scores = self.score_all(&self.query_tokens(query));
        rank_documents(&self.ids, &scores, k)
    }
}

impl Retriever for InvertedIndex {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        Ok(self.retrieve_topk(query, k))
    }
}
