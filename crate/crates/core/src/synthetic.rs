//! A small generated coreference benchmark.
//!
//! 80 invented towns each get one passage per aspect (founding, council,
//! export, population, festival); 20 entity-free distractors per aspect repeat
//! the aspect words. Each session introduces town A, asks two pronoun
//! questions about it, introduces town B and asks one or two about B. Raw
//! pronoun queries match only aspect words, so the distractors outrank the
//! gold passage; substituting the most recent town puts the gold passage first.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{all_instances, save_corpus, save_sessions, Corpus, DataError, LabeledSession, Passage, QueryInstance, Session, Turn};

pub const TOWNS: usize = 80;
pub const DISTRACTORS_PER_ASPECT: usize = 20;
pub const SESSIONS: usize = 100;
pub const DEFAULT_SEED: u64 = 20250101;

const PREFIXES: [&str; 10] = ["Kor", "Bren", "Vel", "Ash", "Tal", "Mor", "Quen", "Dra", "Sil", "Hal"];
const SUFFIXES: [&str; 8] = ["vath", "moor", "dene", "holt", "wick", "mere", "stead", "ford"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Aspect {
    Founding,
    Council,
    Export,
    Population,
    Festival,
}

const ASPECTS: [Aspect; 5] = [
    Aspect::Founding,
    Aspect::Council,
    Aspect::Export,
    Aspect::Population,
    Aspect::Festival,
];

const FOUNDERS: &[&str] = &["salt miners", "river traders", "wandering monks", "fisher families", "stone masons", "horse breeders"];
const GOODS: &[&str] = &["wool", "amber", "slate", "barley", "copper", "dyed linen", "smoked eel", "glassware"];
const CAUSES: &[&str] = &["lanterns", "first snow", "spring lambs", "harvest bread", "boat races", "bell ringing"];
const FILLER: &[&str] = &[
    "timber halls", "narrow lanes", "walled gardens", "old bridges", "copper mills", "market squares", "chalk cliffs",
    "orchard terraces", "ferry landings", "stone wells", "quiet cloisters", "guild houses", "painted gates",
    "tidal flats", "mossy ramparts", "weaving sheds",
];
const ADJECTIVES: &[&str] = &["quiet", "windy", "busy", "remote", "hilly", "coastal"];
const PLACES: &[&str] = &["beside a cold lake", "under tall pines", "along a salt marsh", "above a deep gorge"];

impl Aspect {
    fn question(self) -> &'static str {
        match self {
            Aspect::Founding => "When was it founded?",
            Aspect::Council => "Who leads its governing council?",
            Aspect::Export => "What is its main export?",
            Aspect::Population => "How large is its population?",
            Aspect::Festival => "Which festival does it celebrate?",
        }
    }

    fn passage(self, town: &str, rng: &mut ChaCha8Rng) -> String {
        let f1 = FILLER.choose(rng).unwrap();
        let f2 = FILLER.choose(rng).unwrap();
        match self {
            Aspect::Founding => format!(
                "{town} founded {} by {}. Charters from {town} describe {f1} and {f2}.",
                rng.random_range(900..1800),
                FOUNDERS.choose(rng).unwrap()
            ),
            Aspect::Council => format!(
                "{town} governing council seats {} elders. Council sessions in {town} convene near {f1}.",
                rng.random_range(5..40)
            ),
            Aspect::Export => {
                let g = GOODS.choose(rng).unwrap();
                format!("Main export from {town}: {g}. Merchants ship {g} out of {town} past {f1} and {f2}.")
            }
            Aspect::Population => format!(
                "{town} population near {} residents. Census rolls for {town} list {f1}.",
                rng.random_range(800..90000)
            ),
            Aspect::Festival => format!(
                "{town} festival celebrates {}. Crowds in {town} gather among {f1} and {f2}.",
                CAUSES.choose(rng).unwrap()
            ),
        }
    }

    fn distractor(self, rng: &mut ChaCha8Rng) -> String {
        let f = FILLER.choose(rng).unwrap();
        match self {
            Aspect::Founding => format!("founded founded, founded {f}"),
            Aspect::Council => format!("governing council, governing council {f}"),
            Aspect::Export => format!("main export, main export {f}"),
            Aspect::Population => format!("population population {f}"),
            Aspect::Festival => format!("festival celebrates festival {f}"),
        }
    }

    fn answer(self, town: &str, rng: &mut ChaCha8Rng) -> String {
        match self {
            Aspect::Founding => format!(
                "{town} was founded in {} by {}.",
                rng.random_range(900..1800),
                FOUNDERS.choose(rng).unwrap()
            ),
            Aspect::Council => format!("A council of {} elders governs {town}.", rng.random_range(5..40)),
            Aspect::Export => format!("{town} mainly exports {}.", GOODS.choose(rng).unwrap()),
            Aspect::Population => format!("About {} people live in {town}.", rng.random_range(800..90000)),
            Aspect::Festival => format!("{town} holds a festival for {}.", CAUSES.choose(rng).unwrap()),
        }
    }
}

/// Town names in generation order.
pub fn town_names() -> Vec<String> {
    PREFIXES
        .iter()
        .flat_map(|p| SUFFIXES.iter().map(move |s| format!("{p}{s}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub corpus: Corpus,
    pub sessions: Vec<LabeledSession>,
}

fn passage_id(town: usize, aspect: usize) -> String {
    format!("t{town:02}a{aspect}")
}

impl SyntheticBenchmark {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let towns = town_names();
        let mut corpus = BTreeMap::new();
        for (t, town) in towns.iter().enumerate() {
            for (a, aspect) in ASPECTS.iter().enumerate() {
                let id = passage_id(t, a);
                let text = aspect.passage(town, &mut rng);
                corpus.insert(id.clone(), Passage { id, text });
            }
        }
        for (a, aspect) in ASPECTS.iter().enumerate() {
            for k in 0..DISTRACTORS_PER_ASPECT {
                let id = format!("x{a}d{k:02}");
                let text = aspect.distractor(&mut rng);
                corpus.insert(id.clone(), Passage { id, text });
            }
        }
        let sessions = (0..SESSIONS)
            .map(|s| {
                let picked: Vec<usize> = rand::seq::index::sample(&mut rng, towns.len(), 2).into_vec();
                let (a, b) = (picked[0], picked[1]);
                let mut turns = Vec::new();
                let mut gold = BTreeMap::new();
                let intro = |town: &str, rng: &mut ChaCha8Rng| {
                    Turn::new(
                        format!("Tell me about {town}."),
                        format!(
                            "{town} is a {} town {}.",
                            ADJECTIVES.choose(rng).unwrap(),
                            PLACES.choose(rng).unwrap()
                        ),
                    )
                };
                let mut ask = |town: usize, count: usize, turns: &mut Vec<Turn>, rng: &mut ChaCha8Rng| {
                    let mut order: Vec<usize> = (0..ASPECTS.len()).collect();
                    order.shuffle(rng);
                    for &asp in &order[..count] {
                        let aspect = ASPECTS[asp];
                        turns.push(Turn::new(aspect.question(), aspect.answer(&towns[town], rng)));
                        gold.insert(turns.len(), BTreeSet::from([passage_id(town, asp)]));
                    }
                };
                turns.push(intro(&towns[a], &mut rng));
                ask(a, 2, &mut turns, &mut rng);
                turns.push(intro(&towns[b], &mut rng));
                let count = rng.random_range(1..=2);
                ask(b, count, &mut turns, &mut rng);
                LabeledSession {
                    session: Session {
                        id: format!("syn{s:03}"),
                        turns,
                    },
                    gold,
                }
            })
            .collect();
        SyntheticBenchmark { corpus, sessions }
    }

    pub fn instances(&self) -> Vec<QueryInstance> {
        all_instances(&self.sessions)
    }

    /// Writes `corpus.jsonl` and `sessions.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        save_corpus(&self.corpus, &dir.join("corpus.jsonl"))?;
        save_sessions(&self.sessions, &dir.join("sessions.jsonl"))
    }
}
