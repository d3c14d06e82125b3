//! Versioned JSON index files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bm25::{Bm25Params, InvertedIndex};
use super::dense::DenseIndex;
use super::tokenize::{TokenizerConfig, TruncationLimits};
use super::RetrievalError;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub format_version: u32,
    pub tokenizer: TokenizerConfig,
    pub limits: TruncationLimits,
    pub bm25: Bm25Params,
    pub num_docs: usize,
    pub avgdl: f64,
}

/// Sparse index plus an optional dense index over the same passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexFile {
    pub header: IndexHeader,
    pub sparse: InvertedIndex,
    pub dense: Option<DenseIndex>,
}

#[derive(Deserialize)]
struct HeaderOnly {
    header: VersionOnly,
}

#[derive(Deserialize)]
struct VersionOnly {
    format_version: u32,
}

impl IndexFile {
    pub fn new(sparse: InvertedIndex, dense: Option<DenseIndex>) -> Self {
        IndexFile {
            header: IndexHeader {
                format_version: INDEX_FORMAT_VERSION,
                tokenizer: sparse.tokenizer,
                limits: sparse.limits,
                bm25: sparse.params,
                num_docs: sparse.num_docs(),
                avgdl: sparse.avgdl,
            },
            sparse,
            dense,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("index serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let fmt_err = |e: serde_json::Error| RetrievalError::Config(format!("malformed index file: {e}"));
        let head: HeaderOnly = serde_json::from_slice(bytes).map_err(fmt_err)?;
        if head.header.format_version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::Version {
                found: head.header.format_version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        let file: IndexFile = serde_json::from_slice(bytes).map_err(fmt_err)?;
        if let Some(dense) = &file.dense {
            if dense.ids != file.sparse.ids {
                return Err(RetrievalError::Config("dense and sparse indexes cover different passages".into()));
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| RetrievalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = std::fs::read(path).map_err(|e| RetrievalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized file, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}
