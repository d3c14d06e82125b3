//! Corpora, conversations, per-turn reformulation instances and the
//! self-distilled training triplets, plus their JSONL persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Answer sentinel for turns without an annotated answer.
pub const UNANSWERABLE: &str = "UNANSWERABLE";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("ingestion error: {0}")]
    Ingest(String),
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

/// Passages keyed by id. Iteration order is ascending id.
pub type Corpus = BTreeMap<String, Passage>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub answer: String,
}

impl Turn {
    pub fn new(query: impl Into<String>, answer: impl Into<String>) -> Self {
        Turn {
            query: query.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// Gold passages of one turn, `turn_index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub turn_index: usize,
    pub passage_ids: Vec<String>,
}

/// A session together with its per-turn gold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSession {
    pub session: Session,
    /// turn index (1-based) → gold passage ids
    pub gold: BTreeMap<usize, BTreeSet<String>>,
}

impl LabeledSession {
    /// 1-based indices of turns without gold labels; these never become instances.
    pub fn unlabeled_turns(&self) -> Vec<usize> {
        (1..=self.session.turns.len())
            .filter(|t| !self.gold.contains_key(t))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRecord {
    id: String,
    turns: Vec<Turn>,
    #[serde(default)]
    gold: Vec<GoldLabel>,
}

/// One reformulation task: rewrite `current_query` given `history`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub session_id: String,
    pub turn_index: usize,
    pub current_query: String,
    pub history: Vec<Turn>,
    pub gold_passage_ids: BTreeSet<String>,
}

impl QueryInstance {
    /// Stable key used as the query id in runs and qrels.
    pub fn key(&self) -> String {
        format!("{}#{}", self.session_id, self.turn_index)
    }
}

/// Parsed reasoning/rewrite pair of a model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub reasoning: String,
    pub rewrite: String,
    pub valid: bool,
}

impl ParsedOutput {
    pub fn invalid() -> Self {
        ParsedOutput {
            reasoning: String::new(),
            rewrite: String::new(),
            valid: false,
        }
    }
}

/// A retained self-distilled triplet: context, query and the reasoning/rewrite response.
///
/// Built only by the distillation filters; the loader trusts persisted files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SdSample {
    pub context: Vec<Turn>,
    pub query: String,
    pub response: ParsedOutput,
}

impl SdSample {
    pub(crate) fn new(context: Vec<Turn>, query: String, reasoning: String, rewrite: String) -> Self {
        SdSample {
            context,
            query,
            response: ParsedOutput {
                reasoning,
                rewrite,
                valid: true,
            },
        }
    }

    pub fn reasoning(&self) -> &str {
        &self.response.reasoning
    }

    pub fn rewrite(&self) -> &str {
        &self.response.rewrite
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SdRecord {
    context: Vec<Turn>,
    query: String,
    reasoning: String,
    rewrite: String,
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, DataError> {
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Reads a JSONL corpus (`{"id", "text"}` per line).
pub fn load_corpus(path: &Path) -> Result<Corpus, DataError> {
    let mut corpus = Corpus::new();
    for (line, passage) in parse_jsonl::<Passage>(path)? {
        if passage.text.trim().is_empty() {
            return Err(DataError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("passage {} has empty text", passage.id),
            });
        }
        if corpus.contains_key(&passage.id) {
            return Err(DataError::Ingest(format!(
                "duplicate passage id {} at line {line}",
                passage.id
            )));
        }
        corpus.insert(passage.id.clone(), passage);
    }
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), DataError> {
    write_jsonl(path, corpus.values())
}

/// Reads sessions with their inline gold labels.
pub fn load_sessions(path: &Path) -> Result<Vec<LabeledSession>, DataError> {
    let mut sessions = Vec::new();
    for (line, rec) in parse_jsonl::<SessionRecord>(path)? {
        sessions.push(labeled_session(rec).map_err(|m| DataError::Ingest(format!("line {line}: {m}")))?);
    }
    Ok(sessions)
}

fn labeled_session(rec: SessionRecord) -> Result<LabeledSession, String> {
    if rec.turns.is_empty() {
        return Err(format!("session {} has no turns", rec.id));
    }
    if let Some(t) = rec.turns.iter().position(|t| t.query.trim().is_empty()) {
        return Err(format!("session {} turn {} has an empty query", rec.id, t + 1));
    }
    let mut gold = BTreeMap::new();
    for label in rec.gold {
        if label.turn_index == 0 || label.turn_index > rec.turns.len() {
            return Err(format!(
                "session {}: gold turn_index {} out of range 1..={}",
                rec.id,
                label.turn_index,
                rec.turns.len()
            ));
        }
        if label.passage_ids.is_empty() {
            continue;
        }
        gold.entry(label.turn_index)
            .or_insert_with(BTreeSet::new)
            .extend(label.passage_ids);
    }
    Ok(LabeledSession {
        session: Session {
            id: rec.id,
            turns: rec.turns,
        },
        gold,
    })
}

pub fn save_sessions(sessions: &[LabeledSession], path: &Path) -> Result<(), DataError> {
    write_jsonl(
        path,
        sessions.iter().map(|s| SessionRecord {
            id: s.session.id.clone(),
            turns: s.session.turns.clone(),
            gold: s
                .gold
                .iter()
                .map(|(&turn_index, ids)| GoldLabel {
                    turn_index,
                    passage_ids: ids.iter().cloned().collect(),
                })
                .collect(),
        }),
    )
}

/// One instance per labeled turn. History always holds every earlier turn,
/// labeled or not.
pub fn build_query_instances(session: &LabeledSession) -> Vec<QueryInstance> {
    session
        .gold
        .iter()
        .map(|(&t, gold)| QueryInstance {
            session_id: session.session.id.clone(),
            turn_index: t,
            current_query: session.session.turns[t - 1].query.clone(),
            history: session.session.turns[..t - 1].to_vec(),
            gold_passage_ids: gold.clone(),
        })
        .collect()
}

pub fn all_instances(sessions: &[LabeledSession]) -> Vec<QueryInstance> {
    sessions.iter().flat_map(build_query_instances).collect()
}

/// Checks that every gold id names a corpus passage.
pub fn validate_gold(sessions: &[LabeledSession], corpus: &Corpus) -> Result<(), DataError> {
    for s in sessions {
        for (t, ids) in &s.gold {
            if let Some(missing) = ids.iter().find(|id| !corpus.contains_key(*id)) {
                return Err(DataError::Ingest(format!(
                    "session {} turn {t}: gold passage {missing} not in corpus",
                    s.session.id
                )));
            }
        }
    }
    Ok(())
}

pub fn save_sd_data(samples: &[SdSample], path: &Path) -> Result<(), DataError> {
    write_jsonl(
        path,
        samples.iter().map(|s| SdRecord {
            context: s.context.clone(),
            query: s.query.clone(),
            reasoning: s.response.reasoning.clone(),
            rewrite: s.response.rewrite.clone(),
        }),
    )
}

pub fn load_sd_data(path: &Path) -> Result<Vec<SdSample>, DataError> {
    Ok(parse_jsonl::<SdRecord>(path)?
        .into_iter()
        .map(|(_, r)| SdSample::new(r.context, r.query, r.reasoning, r.rewrite))
        .collect())
}
