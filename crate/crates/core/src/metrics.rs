//! Binary-relevance retrieval metrics with trec_eval cutoff semantics,
//! and TREC run/qrels text I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::retrieval::{RankedList, ScoredPassage};

/// query id → relevant passage ids
pub type Qrels = BTreeMap<String, BTreeSet<String>>;
/// query id → ranking
pub type Run = BTreeMap<String, RankedList>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {0} has no relevance judgments")]
    MissingQrels(String),
    #[error("query {0} ranks passage {1} more than once")]
    DuplicatePassage(String, String),
    #[error("cutoff k must be at least 1")]
    ZeroCutoff,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}

fn per_query<F>(run: &Run, qrels: &Qrels, k: usize, f: F) -> Result<f64, EvalError>
where
    F: Fn(&[ScoredPassage], &BTreeSet<String>) -> f64,
{
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    if run.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (qid, ranking) in run {
        let relevant = qrels
            .get(qid)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| EvalError::MissingQrels(qid.clone()))?;
        let mut seen = BTreeSet::new();
        if let Some(dup) = ranking.entries.iter().find(|e| !seen.insert(e.id.as_str())) {
            return Err(EvalError::DuplicatePassage(qid.clone(), dup.id.clone()));
        }
        let top = &ranking.entries[..k.min(ranking.len())];
        total += f(top, relevant);
    }
    Ok(total / run.len() as f64)
}

pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64, EvalError> {
    per_query(run, qrels, k, |top, rel| {
        top.iter()
            .position(|e| rel.contains(&e.id))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64)
    })
}

pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64, EvalError> {
    per_query(run, qrels, k, |top, rel| {
        let dcg: f64 = top
            .iter()
            .enumerate()
            .filter(|(_, e)| rel.contains(&e.id))
            .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
            .sum();
        let idcg: f64 = (0..rel.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
        dcg / idcg
    })
}

pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64, EvalError> {
    per_query(run, qrels, k, |top, rel| {
        let hits = top.iter().filter(|e| rel.contains(&e.id)).count();
        hits as f64 / rel.len() as f64
    })
}

/// The metric set reported throughout: MRR@3, NDCG@3, R@10, R@100.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    #[serde(rename = "MRR@3")]
    pub mrr3: f64,
    #[serde(rename = "NDCG@3")]
    pub ndcg3: f64,
    #[serde(rename = "R@10")]
    pub recall10: f64,
    #[serde(rename = "R@100")]
    pub recall100: f64,
}

impl MetricReport {
    pub fn compute(run: &Run, qrels: &Qrels) -> Result<Self, EvalError> {
        Ok(MetricReport {
            mrr3: mrr_at_k(run, qrels, 3)?,
            ndcg3: ndcg_at_k(run, qrels, 3)?,
            recall10: recall_at_k(run, qrels, 10)?,
            recall100: recall_at_k(run, qrels, 100)?,
        })
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>8}", "metric", "value");
        for (name, v) in [
            ("MRR@3", self.mrr3),
            ("NDCG@3", self.ndcg3),
            ("R@10", self.recall10),
            ("R@100", self.recall100),
        ] {
            let _ = writeln!(s, "{name:<8} {v:>8.4}");
        }
        s
    }
}

/// Six-column run lines: `qid Q0 docid rank score tag`.
pub fn format_run(run: &Run, tag: &str) -> String {
    let mut s = String::new();
    for (qid, ranking) in run {
        for (i, e) in ranking.entries.iter().enumerate() {
            let _ = writeln!(s, "{qid} Q0 {} {} {} {tag}", e.id, i + 1, e.score);
        }
    }
    s
}

/// Four-column qrels lines: `qid 0 docid 1`.
pub fn format_qrels(qrels: &Qrels) -> String {
    let mut s = String::new();
    for (qid, rel) in qrels {
        for d in rel {
            let _ = writeln!(s, "{qid} 0 {d} 1");
        }
    }
    s
}

fn write_file(path: &Path, body: &str) -> Result<(), EvalError> {
    std::fs::write(path, body).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn read_file(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn export_trec(run: &Run, qrels: &Qrels, run_path: &Path, qrels_path: &Path, tag: &str) -> Result<(), EvalError> {
    write_file(run_path, &format_run(run, tag))?;
    write_file(qrels_path, &format_qrels(qrels))
}

/// Parses a run file; entries are ordered by the rank column.
pub fn parse_run(text: &str, path: &str) -> Result<Run, EvalError> {
    let mut raw: BTreeMap<String, Vec<(usize, ScoredPassage)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| EvalError::Format {
            path: path.to_string(),
            line: i + 1,
            message: m.to_string(),
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(err("expected 6 columns"));
        }
        let rank: usize = cols[3].parse().map_err(|_| err("bad rank"))?;
        let score: f64 = cols[4].parse().map_err(|_| err("bad score"))?;
        raw.entry(cols[0].to_string()).or_default().push((
            rank,
            ScoredPassage {
                id: cols[2].to_string(),
                score,
            },
        ));
    }
    Ok(raw
        .into_iter()
        .map(|(q, mut v)| {
            v.sort_by_key(|(r, _)| *r);
            (
                q,
                RankedList {
                    entries: v.into_iter().map(|(_, e)| e).collect(),
                },
            )
        })
        .collect())
}

/// Parses a qrels file; judgments with relevance 0 are dropped.
pub fn parse_qrels(text: &str, path: &str) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let rel: Option<i64> = cols.get(3).and_then(|c| c.parse().ok());
        match (cols.len(), rel) {
            (4, Some(r)) => {
                if r > 0 {
                    qrels.entry(cols[0].to_string()).or_default().insert(cols[2].to_string());
                }
            }
            _ => {
                return Err(EvalError::Format {
                    path: path.to_string(),
                    line: i + 1,
                    message: "expected `qid 0 docid relevance`".into(),
                })
            }
        }
    }
    Ok(qrels)
}

pub fn import_trec(run_path: &Path, qrels_path: &Path) -> Result<(Run, Qrels), EvalError> {
    let run = parse_run(&read_file(run_path)?, &run_path.display().to_string())?;
    let qrels = parse_qrels(&read_file(qrels_path)?, &qrels_path.display().to_string())?;
    Ok((run, qrels))
}
