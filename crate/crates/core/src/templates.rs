//! Template rewrites built from conversation history.
//!
//! Every instance gets the same fixed list of [`NUM_SLOTS`] candidates, in
//! slot order: the raw query, pronoun substitution with the 1st/2nd/3rd most
//! recent history entity, the query plus top history keywords, the query
//! plus a snippet of the previous answer, and an untagged output that
//! violates the output format.

use std::collections::BTreeMap;

use crate::data::{Turn, UNANSWERABLE};
use crate::format::render_output;

pub const ENTITY_SLOTS: usize = 3;
pub const NUM_SLOTS: usize = ENTITY_SLOTS + 4;
const KEYWORDS: usize = 3;
const SNIPPET_WORDS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Raw,
    /// 0 = most recent entity
    Entity(usize),
    Keywords,
    AnswerSnippet,
    Unformatted,
}

impl Slot {
    pub fn from_index(i: usize) -> Slot {
        match i {
            0 => Slot::Raw,
            i if i <= ENTITY_SLOTS => Slot::Entity(i - 1),
            i if i == ENTITY_SLOTS + 1 => Slot::Keywords,
            i if i == ENTITY_SLOTS + 2 => Slot::AnswerSnippet,
            i if i == ENTITY_SLOTS + 3 => Slot::Unformatted,
            _ => panic!("slot index {i} out of range"),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Slot::Raw => 0,
            Slot::Entity(k) => 1 + k,
            Slot::Keywords => ENTITY_SLOTS + 1,
            Slot::AnswerSnippet => ENTITY_SLOTS + 2,
            Slot::Unformatted => ENTITY_SLOTS + 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub slot: Slot,
    pub reasoning: String,
    pub rewrite: String,
}

impl Candidate {
    /// Model-output text for this candidate.
    pub fn render(&self) -> String {
        match self.slot {
            Slot::Unformatted => format!("Rewrite: {}", self.rewrite),
            _ => render_output(&self.reasoning, &self.rewrite),
        }
    }
}

const STOP_CAPITALIZED: &[&str] = &[
    "A", "About", "Also", "An", "And", "Are", "As", "At", "But", "By", "Can", "Could", "Did", "Do", "Does", "For",
    "From", "He", "Her", "Here", "His", "How", "I", "If", "In", "Is", "It", "Its", "Me", "My", "No", "Not", "Of",
    "On", "Or", "Our", "Please", "She", "Should", "So", "Tell", "That", "The", "Their", "Them", "There", "These",
    "They", "This", "Those", "To", "UNANSWERABLE", "Was", "We", "Were", "What", "When", "Where", "Which", "Who",
    "Whom", "Whose", "Why", "Will", "With", "Would", "Yes", "You", "Your",
];

const STOP_KEYWORDS: &[&str] = &[
    "a", "about", "also", "an", "and", "are", "as", "at", "be", "but", "by", "can", "could", "did", "do", "does",
    "for", "from", "had", "has", "have", "he", "her", "here", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "me", "my", "no", "not", "of", "on", "or", "our", "she", "so", "tell", "that", "the", "their", "them",
    "there", "these", "they", "this", "those", "to", "unanswerable", "was", "we", "were", "what", "when", "where",
    "which", "who", "whom", "whose", "why", "will", "with", "would", "yes", "you", "your",
];

const PRONOUNS: &[&str] = &["it", "he", "she", "they", "him", "her", "them"];
const POSSESSIVES: &[&str] = &["its", "his", "their"];

fn trim_word(w: &str) -> &str {
    let w = w.trim_matches(|c: char| !c.is_alphanumeric());
    w.strip_suffix("'s").or_else(|| w.strip_suffix("’s")).unwrap_or(w)
}

fn is_entity_word(w: &str) -> bool {
    w.chars().next().is_some_and(|c| c.is_uppercase()) && !STOP_CAPITALIZED.contains(&w)
}

/// Maximal runs of capitalized non-stop words, last run first.
fn entities_in(text: &str) -> Vec<String> {
    let mut runs: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for raw in text.split_whitespace() {
        let w = trim_word(raw);
        if is_entity_word(w) {
            current.push(w);
            let ends_phrase = raw.ends_with(|c: char| matches!(c, ',' | '.' | '?' | '!' | ';' | ':'))
                || raw.ends_with("'s")
                || raw.ends_with("’s");
            if ends_phrase {
                runs.push(std::mem::take(&mut current));
            }
        } else if !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs.into_iter().rev().map(|r| r.join(" ")).collect()
}

/// Named entities mentioned in the history, most recent mention first, deduplicated.
pub fn history_entities(history: &[Turn]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for turn in history.iter().rev() {
        for text in [&turn.answer, &turn.query] {
            for e in entities_in(text) {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        }
    }
    out
}

fn words_lower(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Most frequent history content words not already in the query.
/// Ties go to the more recently used word.
pub fn history_keywords(history: &[Turn], query: &str, m: usize) -> Vec<String> {
    let in_query: Vec<String> = words_lower(query).collect();
    let mut stats: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut pos = 0;
    for turn in history {
        for text in [&turn.query, &turn.answer] {
            for w in words_lower(text) {
                pos += 1;
                if STOP_KEYWORDS.contains(&w.as_str()) || in_query.contains(&w) || w.len() < 2 {
                    continue;
                }
                let e = stats.entry(w).or_insert((0, 0));
                e.0 += 1;
                e.1 = pos;
            }
        }
    }
    let mut ranked: Vec<_> = stats.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(b.1 .1.cmp(&a.1 .1)));
    ranked.into_iter().take(m).map(|(w, _)| w).collect()
}

/// Replaces pronouns in `query` with `entity`; appends the entity when the
/// query has no pronoun.
pub fn substitute(query: &str, entity: &str) -> String {
    let mut replaced = false;
    let words: Vec<String> = query
        .split_whitespace()
        .map(|raw| {
            let core_start = raw.find(|c: char| c.is_alphanumeric()).unwrap_or(raw.len());
            let core_end = raw.rfind(|c: char| c.is_alphanumeric()).map_or(core_start, |i| i + 1);
            let (pre, core, post) = (&raw[..core_start], &raw[core_start..core_end], &raw[core_end..]);
            let lower = core.to_lowercase();
            if PRONOUNS.contains(&lower.as_str()) {
                replaced = true;
                format!("{pre}{entity}{post}")
            } else if POSSESSIVES.contains(&lower.as_str()) {
                replaced = true;
                format!("{pre}{entity}'s{post}")
            } else {
                raw.to_string()
            }
        })
        .collect();
    let out = words.join(" ");
    if replaced {
        return out;
    }
    let trimmed = out.trim_end_matches(|c: char| matches!(c, '?' | '.' | '!'));
    format!("{trimmed} {entity}{}", &out[trimmed.len()..])
}

fn snippet(text: &str) -> String {
    text.split_whitespace().take(SNIPPET_WORDS).collect::<Vec<_>>().join(" ")
}

/// The full candidate list for one instance, indexed by slot.
pub fn candidates(history: &[Turn], query: &str) -> Vec<Candidate> {
    let query = query.trim();
    let entities = history_entities(history);
    let mut out = Vec::with_capacity(NUM_SLOTS);
    out.push(Candidate {
        slot: Slot::Raw,
        reasoning: "The query can be used as it is.".into(),
        rewrite: query.to_string(),
    });
    for k in 0..ENTITY_SLOTS {
        let c = match entities.get(k) {
            Some(e) => Candidate {
                slot: Slot::Entity(k),
                reasoning: format!("The omitted or referenced topic is {e} from the conversation."),
                rewrite: substitute(query, e),
            },
            None => Candidate {
                slot: Slot::Entity(k),
                reasoning: "No earlier topic is available to resolve the reference.".into(),
                rewrite: query.to_string(),
            },
        };
        out.push(c);
    }
    let keywords = history_keywords(history, query, KEYWORDS);
    out.push(Candidate {
        slot: Slot::Keywords,
        reasoning: format!("Adding salient context terms: {}.", keywords.join(", ")),
        rewrite: if keywords.is_empty() {
            query.to_string()
        } else {
            format!("{query} {}", keywords.join(" "))
        },
    });
    let previous = history.last().map(|t| {
        if t.answer.trim() == UNANSWERABLE {
            t.query.as_str()
        } else {
            t.answer.as_str()
        }
    });
    out.push(Candidate {
        slot: Slot::AnswerSnippet,
        reasoning: "The previous turn supplies the missing context.".into(),
        rewrite: match previous {
            Some(p) if !p.trim().is_empty() => format!("{query} {}", snippet(p)),
            _ => query.to_string(),
        },
    });
    out.push(Candidate {
        slot: Slot::Unformatted,
        reasoning: String::new(),
        rewrite: query.to_string(),
    });
    debug_assert_eq!(out.len(), NUM_SLOTS);
    out
}
