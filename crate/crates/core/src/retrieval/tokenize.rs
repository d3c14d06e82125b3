//! Text analysis shared by the sparse and dense indexes.

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

/// Lucene's default English stop set.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it", "no", "not",
    "of", "on", "or", "such", "that", "the", "their", "then", "there", "these", "they", "this", "to", "was",
    "will", "with",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub stem: bool,
    pub remove_stopwords: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            stem: true,
            remove_stopwords: false,
        }
    }
}

/// Token budgets for queries, query+context concatenations and passages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationLimits {
    pub query_tokens: usize,
    pub concatenated_tokens: usize,
    pub passage_tokens: usize,
}

impl Default for TruncationLimits {
    fn default() -> Self {
        TruncationLimits {
            query_tokens: 64,
            concatenated_tokens: 512,
            passage_tokens: 384,
        }
    }
}

/// Splits on non-alphanumeric boundaries, then lowercases, drops stopwords and
/// stems as configured. Keeps at most `limit` tokens from the head.
pub fn tokenize(text: &str, config: &TokenizerConfig, limit: usize) -> Vec<String> {
    let stemmer = config.stem.then(|| Stemmer::create(Algorithm::English));
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| if config.lowercase { w.to_lowercase() } else { w.to_string() })
        .filter(|w| !(config.remove_stopwords && STOPWORDS.contains(&w.to_lowercase().as_str())))
        .map(|w| match &stemmer {
            Some(s) => s.stem(&w).into_owned(),
            None => w,
        })
        .take(limit)
        .collect()
}
