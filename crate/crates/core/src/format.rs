//! Prompt rendering and the `<think>…</think>\n<rewrite>…</rewrite>` output protocol.
//!
//! An output is format-compliant when, ignoring surrounding whitespace, it is
//! exactly one think block followed by exactly one rewrite block, and the
//! rewrite is non-empty after trimming. Tags are matched case-sensitively.

use thiserror::Error;

use crate::data::{ParsedOutput, Turn};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const REWRITE_OPEN: &str = "<rewrite>";
pub const REWRITE_CLOSE: &str = "</rewrite>";

const FEW_SHOT_V1: &str = include_str!("../assets/prompts/few_shot.v1.txt");
const TRAIN_V1: &str = include_str!("../assets/prompts/train.v1.txt");
/// Synthetic demonstration for the few-shot slot. Not taken from any dataset.
pub const DEFAULT_EXAMPLE: &str = include_str!("../assets/prompts/example.v1.txt");

const CONTEXT_BEGIN: &str = "### Context Begin ###";
const CONTEXT_END: &str = "### Context End ###";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("few-shot prompt requires at least one example")]
    MissingExample,
    #[error("train/inference prompt takes no examples")]
    UnexpectedExample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    FewShot,
    TrainInfer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub mode: PromptMode,
    pub version: u32,
    text: &'static str,
}

impl PromptTemplate {
    pub fn few_shot() -> Self {
        PromptTemplate {
            mode: PromptMode::FewShot,
            version: 1,
            text: FEW_SHOT_V1,
        }
    }

    pub fn train() -> Self {
        PromptTemplate {
            mode: PromptMode::TrainInfer,
            version: 1,
            text: TRAIN_V1,
        }
    }

    pub fn render(&self, history: &[Turn], query: &str, examples: &[&str]) -> Result<String, TemplateError> {
        match (self.mode, examples.is_empty()) {
            (PromptMode::FewShot, true) => return Err(TemplateError::MissingExample),
            (PromptMode::TrainInfer, false) => return Err(TemplateError::UnexpectedExample),
            _ => {}
        }
        let example = examples.iter().map(|e| e.trim_end()).collect::<Vec<_>>().join("\n\n");
        let out = self
            .text
            .trim_end_matches('\n')
            .replace("{example}", &example)
            .replace("{context}", &render_context(history))
            .replace("{query}", &escape(query));
        Ok(out)
    }
}

/// Escapes line breaks so every turn occupies exactly one line.
fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// `Q1: …\nA1: …` lines, one pair per turn.
pub fn render_context(history: &[Turn]) -> String {
    history
        .iter()
        .enumerate()
        .map(|(i, t)| format!("Q{n}: {}\nA{n}: {}", escape(&t.query), escape(&t.answer), n = i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Recovers history and query from a rendered prompt (either mode).
pub fn parse_prompt(prompt: &str) -> Option<(Vec<Turn>, String)> {
    let begin = prompt.rfind(CONTEXT_BEGIN)? + CONTEXT_BEGIN.len();
    let end = begin + prompt[begin..].find(CONTEXT_END)?;
    let block = prompt[begin..end].trim_matches('\n');
    let mut turns = Vec::new();
    let mut lines = block.lines().filter(|l| !l.is_empty());
    let mut n = 1;
    while let Some(q) = lines.next() {
        let q = q.strip_prefix(&format!("Q{n}: "))?;
        let a = lines.next()?.strip_prefix(&format!("A{n}: "))?;
        turns.push(Turn::new(unescape(q), unescape(a)));
        n += 1;
    }
    let tail = &prompt[end + CONTEXT_END.len()..];
    let query = tail.lines().find_map(|l| l.strip_prefix("Query: "))?;
    Some((turns, unescape(query)))
}

/// Formats a reasoning/rewrite pair in the required output structure.
pub fn render_output(reasoning: &str, rewrite: &str) -> String {
    format!("{THINK_OPEN} {reasoning} {THINK_CLOSE}\n{REWRITE_OPEN} {rewrite} {REWRITE_CLOSE}")
}

pub fn parse_output(text: &str) -> ParsedOutput {
    try_parse(text).unwrap_or_else(ParsedOutput::invalid)
}

fn try_parse(text: &str) -> Option<ParsedOutput> {
    for tag in [THINK_OPEN, THINK_CLOSE, REWRITE_OPEN, REWRITE_CLOSE] {
        if text.matches(tag).count() != 1 {
            return None;
        }
    }
    let rest = text.trim_start().strip_prefix(THINK_OPEN)?;
    let (reasoning, rest) = rest.split_once(THINK_CLOSE)?;
    let rest = rest.trim_start().strip_prefix(REWRITE_OPEN)?;
    let (rewrite, rest) = rest.split_once(REWRITE_CLOSE)?;
    if !rest.trim().is_empty() {
        return None;
    }
    let rewrite = rewrite.trim();
    if rewrite.is_empty() {
        return None;
    }
    Some(ParsedOutput {
        reasoning: reasoning.trim().to_string(),
        rewrite: rewrite.to_string(),
        valid: true,
    })
}

/// Format validation as an indicator: 1 when compliant, else 0.
pub fn validate(text: &str) -> u8 {
    parse_output(text).valid as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_canonical_output() {
        let p = parse_output("<think> a </think>\n<rewrite> b </rewrite>");
        assert!(p.valid);
        assert_eq!(p.reasoning, "a");
        assert_eq!(p.rewrite, "b");
    }

    #[test]
    fn invalid_shapes() {
        for bad in [
            "<think> a </think>\n<rewrite> b",
            "<think> a </think>\n<rewrite> b </rewrite><rewrite> c </rewrite>",
            "",
            "<rewrite> x </rewrite>",
            "<think> a </think>\n<rewrite>   </rewrite>",
            "preamble <think> a </think><rewrite> b </rewrite>",
            "<think> a </think> junk <rewrite> b </rewrite>",
            "<think> a </think><rewrite> b </rewrite> trailing",
            "<rewrite> b </rewrite><think> a </think>",
            "<THINK> a </THINK><rewrite> b </rewrite>",
            "<think> a <think> </think><rewrite> b </rewrite>",
        ] {
            assert_eq!(validate(bad), 0, "{bad:?}");
            assert!(!parse_output(bad).valid);
        }
    }

    #[test]
    fn whitespace_and_newlines_tolerated() {
        let p = parse_output("\n  <think>line one\nline two</think>\n\n  <rewrite>q</rewrite>\n");
        assert!(p.valid);
        assert_eq!(p.reasoning, "line one\nline two");
        assert_eq!(validate("<think></think><rewrite>x</rewrite>"), 1);
    }

    #[test]
    fn empty_history_renders_empty_block() {
        let s = PromptTemplate::train().render(&[], "who won?", &[]).unwrap();
        assert!(s.contains("### Context Begin ###\n\n### Context End ###"));
        assert!(s.contains("\nQuery: who won?\nRewrite:"));
        assert!(s.ends_with("Rewrite:"));
    }

    #[test]
    fn history_lines_in_order() {
        let h = [Turn::new("q one", "a one"), Turn::new("q two", "a two")];
        let s = PromptTemplate::train().render(&h, "q3", &[]).unwrap();
        assert!(s.contains("### Context Begin ###\nQ1: q one\nA1: a one\nQ2: q two\nA2: a two\n### Context End ###"));
    }

    #[test]
    fn example_slot_rules() {
        assert_eq!(
            PromptTemplate::few_shot().render(&[], "q", &[]),
            Err(TemplateError::MissingExample)
        );
        assert_eq!(
            PromptTemplate::train().render(&[], "q", &["x"]),
            Err(TemplateError::UnexpectedExample)
        );
        let s = PromptTemplate::few_shot().render(&[], "q", &[DEFAULT_EXAMPLE]).unwrap();
        assert!(s.contains("### Example Begin ###\nContext:"));
        assert!(s.ends_with("Query: q"));
        assert_eq!(parse_prompt(&s), Some((vec![], "q".to_string())));
    }

    fn text() -> impl Strategy<Value = String> {
        "[ -~\n]{0,30}"
    }

    proptest! {
        #[test]
        fn validate_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let s = String::from_utf8_lossy(&bytes);
            let v = validate(&s);
            prop_assert!(v <= 1);
        }

        #[test]
        fn parse_inverts_render_output(r in "[a-zA-Z0-9 .,?\n]{0,40}", w in "[a-zA-Z0-9 .,?]{0,40}[a-z]") {
            let p = parse_output(&render_output(&r, &w));
            prop_assert!(p.valid);
            prop_assert_eq!(p.reasoning, r.trim());
            prop_assert_eq!(p.rewrite, w.trim());
        }

        #[test]
        fn rendering_is_injective(
            h1 in proptest::collection::vec((text(), text()), 0..3),
            q1 in text(),
            h2 in proptest::collection::vec((text(), text()), 0..3),
            q2 in text(),
        ) {
            let t1: Vec<Turn> = h1.into_iter().map(|(q, a)| Turn::new(q, a)).collect();
            let t2: Vec<Turn> = h2.into_iter().map(|(q, a)| Turn::new(q, a)).collect();
            let tpl = PromptTemplate::train();
            let p1 = tpl.render(&t1, &q1, &[]).unwrap();
            let p2 = tpl.render(&t2, &q2, &[]).unwrap();
            prop_assert_eq!(p1 == p2, (t1.clone(), q1.clone()) == (t2, q2));
            prop_assert_eq!(parse_prompt(&p1), Some((t1, q1)));
        }
    }
}
