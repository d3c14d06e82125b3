use thiserror::Error;

use crate::format::parse_prompt;
use crate::templates::{candidates, NUM_SLOTS};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("generator cannot read prompt")]
    BadPrompt,
}

/// Text generation behind the self-distillation stage.
pub trait Generator: Send + Sync {
    /// Up to `n` raw outputs for one prompt. Callers pad short results with empty strings.
    fn generate(&self, prompt: &str, n: usize, temperature: f64) -> Result<Vec<String>, GenerateError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, prompt: &str, n: usize, temperature: f64) -> Result<Vec<String>, GenerateError> {
        (**self).generate(prompt, n, temperature)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, prompt: &str, n: usize, temperature: f64) -> Result<Vec<String>, GenerateError> {
        (**self).generate(prompt, n, temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotChoice {
    /// Pseudo-random slot per (prompt, sample index).
    Hashed,
    Fixed(usize),
}

/// Offline generator that answers with the toy template candidates.
#[derive(Debug, Clone)]
pub struct TemplateGenerator {
    pub seed: u64,
    pub choice: SlotChoice,
}

impl TemplateGenerator {
    pub fn new(seed: u64) -> Self {
        TemplateGenerator {
            seed,
            choice: SlotChoice::Hashed,
        }
    }

    pub fn fixed(slot: usize) -> Self {
        assert!(slot < NUM_SLOTS, "slot {slot} out of range");
        TemplateGenerator {
            seed: 0,
            choice: SlotChoice::Fixed(slot),
        }
    }

    fn slot(&self, prompt: &str, i: usize) -> usize {
        match self.choice {
            SlotChoice::Fixed(s) => s,
            SlotChoice::Hashed => {
                let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
                for b in prompt.bytes().chain((i as u64).to_le_bytes()) {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
                (h % NUM_SLOTS as u64) as usize
            }
        }
    }
}

impl Generator for TemplateGenerator {
    fn generate(&self, prompt: &str, n: usize, _temperature: f64) -> Result<Vec<String>, GenerateError> {
        let (history, query) = parse_prompt(prompt).ok_or(GenerateError::BadPrompt)?;
        let cands = candidates(&history, &query);
        Ok((0..n).map(|i| cands[self.slot(prompt, i)].render()).collect())
    }
}
