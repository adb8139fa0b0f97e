//! Templated question/passage/answer corpora over a closed vocabulary.
//!
//! Every passage is a shuffled list of short sentences. Fact clauses read
//! `<Subject> <relation> <entity> .`; the question `what <relation> <subject> ?`
//! asks for exactly one of them. Filler sentences never mention entities.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::retrieval::EmbeddingTable;
use super::{CandidateRecord, Example, ExampleRecord, PassageRecord};
use crate::error::{Error, Result};

const SUBJECTS: [&str; 40] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
    "uniform", "victor", "whiskey", "xray", "yankee", "zulu", "ariadne", "boreas", "calypso",
    "daedalus", "electra", "freya", "gaia", "helios", "icarus", "janus", "kronos", "leto", "medea",
    "nyx",
];

const RELATIONS: [&str; 12] = [
    "built", "found", "painted", "sold", "carried", "named", "stole", "wrote", "buried", "guarded",
    "drew", "lost",
];

const ADJECTIVES: [&str; 15] = [
    "little", "fat", "red", "blue", "old", "silent", "golden", "broken", "hidden", "bright",
    "dark", "quiet", "swift", "tall", "frozen",
];

const NOUNS: [&str; 20] = [
    "boy", "man", "river", "stone", "tower", "bell", "garden", "ship", "lamp", "crown", "mirror",
    "bridge", "engine", "forest", "harbor", "violin", "comet", "anchor", "feather", "lantern",
];

const FILLER: [&str; 22] = [
    "weather", "was", "mild", "today", "people", "walked", "around", "town", "and", "talked",
    "quietly", "later", "some", "rain", "fell", "near", "market", "morning", "evening", "many",
    "visitors", "came",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_dev: usize,
    /// Fact clauses per passage besides the gold one.
    pub distractors: usize,
    /// Distractor clauses share the gold clause's subject, so only the
    /// relation word separates the candidates.
    pub twin: bool,
    /// Probability that an entity is wrapped in paired quote tokens.
    pub quote_rate: f64,
    /// Facts are fixed per (subject, relation) across the corpus, and every
    /// example gets `support_passages` extra passages about its subject.
    pub recurrence: bool,
    pub support_passages: usize,
    pub min_filler: usize,
    pub max_filler: usize,
    pub n_entities: usize,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dev: 500,
            distractors: 1,
            twin: true,
            quote_rate: 0.0,
            recurrence: false,
            support_passages: 0,
            min_filler: 1,
            max_filler: 2,
            n_entities: 60,
            embedding_dim: 16,
            embedding_noise: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_train == 0 || self.n_dev == 0 {
            return fail("n_train and n_dev must be positive".into());
        }
        if self.twin && self.distractors == 0 {
            return fail("twin mode needs at least one distractor".into());
        }
        if self.distractors + 1 > RELATIONS.len() {
            return fail(format!("at most {} distractors", RELATIONS.len() - 1));
        }
        if !(0.0..=1.0).contains(&self.quote_rate) {
            return fail(format!("quote_rate {} outside [0, 1]", self.quote_rate));
        }
        if self.min_filler > self.max_filler {
            return fail("min_filler exceeds max_filler".into());
        }
        let max_entities = NOUNS.len() * (1 + ADJECTIVES.len());
        if self.n_entities < self.distractors + 1 || self.n_entities > max_entities {
            return fail(format!(
                "n_entities must lie in [{}, {max_entities}]",
                self.distractors + 1
            ));
        }
        if self.embedding_dim == 0 || self.embedding_noise < 0.0 {
            return fail("embedding_dim must be positive and embedding_noise non-negative".into());
        }
        if self.support_passages > 0 && !self.recurrence {
            return fail("support_passages requires recurrence".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    /// Every retrievable passage: example passages first, then support passages.
    pub passages: Vec<PassageRecord>,
    pub embeddings: EmbeddingTable,
}

struct Generator<'c> {
    config: &'c SyntheticConfig,
    rng: ChaCha8Rng,
    entities: Vec<Vec<&'static str>>,
    facts: HashMap<(usize, usize), usize>,
}

/// A sentence under construction, plus where its entity sits.
#[derive(Clone)]
struct Sentence {
    text: String,
    entity: Option<(usize, usize)>,
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn contains_words(hay: &[&str], needle: &[&str]) -> bool {
    needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

impl<'c> Generator<'c> {
    fn new(config: &'c SyntheticConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entities: Vec<Vec<&'static str>> = Vec::new();
        while entities.len() < config.n_entities {
            let noun = *NOUNS.choose(&mut rng).expect("non-empty");
            let roll: f64 = rng.random();
            let phrase = if roll < 0.2 {
                vec![noun]
            } else if roll < 0.7 {
                vec![*ADJECTIVES.choose(&mut rng).expect("non-empty"), noun]
            } else {
                let a = ADJECTIVES
                    .choose_multiple(&mut rng, 2)
                    .copied()
                    .collect::<Vec<_>>();
                vec![a[0], a[1], noun]
            };
            if !entities.contains(&phrase) {
                entities.push(phrase);
            }
        }
        let mut facts = HashMap::new();
        if config.recurrence {
            for s in 0..SUBJECTS.len() {
                for r in 0..RELATIONS.len() {
                    facts.insert((s, r), rng.random_range(0..entities.len()));
                }
            }
        }
        Self {
            config,
            rng,
            entities,
            facts,
        }
    }

    fn compatible(&self, chosen: &[usize], candidate: usize) -> bool {
        let c = &self.entities[candidate];
        chosen.iter().all(|&o| {
            let other = &self.entities[o];
            o != candidate && !contains_words(other, c) && !contains_words(c, other)
        })
    }

    fn entity_for(&mut self, subject: usize, relation: usize, chosen: &[usize]) -> Option<usize> {
        if self.config.recurrence {
            let e = self.facts[&(subject, relation)];
            return self.compatible(chosen, e).then_some(e);
        }
        for _ in 0..100 {
            let e = self.rng.random_range(0..self.entities.len());
            if self.compatible(chosen, e) {
                return Some(e);
            }
        }
        None
    }

    fn fact_sentence(&mut self, subject: usize, relation: usize, entity: usize) -> Sentence {
        let mut text = format!("{} {} ", capitalize(SUBJECTS[subject]), RELATIONS[relation]);
        let quoted =
            self.config.quote_rate > 0.0 && self.rng.random::<f64>() < self.config.quote_rate;
        if quoted {
            text.push('"');
        }
        let start = text.chars().count();
        let phrase = self.entities[entity].join(" ");
        text.push_str(&phrase);
        if quoted {
            text.push('"');
        }
        text.push_str(" .");
        Sentence {
            text,
            entity: Some((start, phrase.chars().count())),
        }
    }

    fn filler_sentence(&mut self) -> Sentence {
        let n = self.rng.random_range(3..=6);
        let words: Vec<&str> = (0..n)
            .map(|_| *FILLER.choose(&mut self.rng).expect("non-empty"))
            .collect();
        let mut text = capitalize(words[0]);
        for w in &words[1..] {
            text.push(' ');
            text.push_str(w);
        }
        text.push_str(" .");
        Sentence { text, entity: None }
    }

    /// Joins sentences, returning the text and each sentence's char offset.
    fn assemble(sentences: &[Sentence]) -> (String, Vec<usize>) {
        let mut text = String::new();
        let mut offsets = Vec::with_capacity(sentences.len());
        for s in sentences {
            if !text.is_empty() {
                text.push(' ');
            }
            offsets.push(text.chars().count());
            text.push_str(&s.text);
        }
        (text, offsets)
    }

    fn fillers(&mut self) -> Vec<Sentence> {
        let n = self
            .rng
            .random_range(self.config.min_filler..=self.config.max_filler);
        (0..n).map(|_| self.filler_sentence()).collect()
    }

    fn example(&mut self, id: String) -> Result<ExampleRecord> {
        for _ in 0..100 {
            if let Some(record) = self.try_example(&id) {
                return Ok(record);
            }
        }
        Err(Error::Config(format!(
            "could not place {} distinct candidates; raise n_entities",
            self.config.distractors + 1
        )))
    }

    fn try_example(&mut self, id: &str) -> Option<ExampleRecord> {
        let subject = self.rng.random_range(0..SUBJECTS.len());
        let relations: Vec<usize> =
            rand::seq::index::sample(&mut self.rng, RELATIONS.len(), self.config.distractors + 1)
                .into_vec();
        let mut entities = Vec::new();
        let mut clauses = Vec::new();
        for (k, &rel) in relations.iter().enumerate() {
            let subj = if k == 0 || self.config.twin {
                subject
            } else {
                let mut s = self.rng.random_range(0..SUBJECTS.len() - 1);
                if s >= subject {
                    s += 1;
                }
                s
            };
            let e = self.entity_for(subj, rel, &entities)?;
            entities.push(e);
            clauses.push((subj, rel, e));
        }
        let mut sentences: Vec<(bool, Sentence)> = clauses
            .iter()
            .enumerate()
            .map(|(k, &(s, r, e))| (k == 0, self.fact_sentence(s, r, e)))
            .collect();
        sentences.extend(self.fillers().into_iter().map(|s| (false, s)));
        sentences.shuffle(&mut self.rng);

        let ordered: Vec<Sentence> = sentences.iter().map(|(_, s)| s.clone()).collect();
        let (text, offsets) = Self::assemble(&ordered);
        let mut answer = None;
        let mut candidates = Vec::new();
        for ((is_gold, s), off) in sentences.iter().zip(&offsets) {
            if let Some((start, len)) = s.entity {
                let chars: String = text.chars().skip(off + start).take(len).collect();
                let c = CandidateRecord {
                    text: chars,
                    start: off + start,
                };
                if *is_gold {
                    answer = Some(c.clone());
                }
                candidates.push(c);
            }
        }
        let answer = answer.expect("gold clause present");
        Some(ExampleRecord {
            id: id.to_string(),
            question: format!(
                "What {} {} ?",
                RELATIONS[relations[0]],
                capitalize(SUBJECTS[subject])
            ),
            passage: text,
            answers: vec![answer.text.clone()],
            answer_starts: vec![answer.start],
            candidates: if self.config.distractors > 0 {
                candidates
            } else {
                Vec::new()
            },
            topic: Some(SUBJECTS[subject].to_string()),
        })
    }

    fn support_passage(&mut self, id: String, subject: usize) -> PassageRecord {
        let n_facts = self.rng.random_range(1..=2);
        let relations =
            rand::seq::index::sample(&mut self.rng, RELATIONS.len(), n_facts).into_vec();
        let mut sentences: Vec<Sentence> = relations
            .iter()
            .map(|&r| {
                let e = self.facts[&(subject, r)];
                self.fact_sentence(subject, r, e)
            })
            .collect();
        sentences.extend(self.fillers());
        sentences.shuffle(&mut self.rng);
        let (text, _) = Self::assemble(&sentences);
        PassageRecord {
            id,
            text,
            topic: Some(SUBJECTS[subject].to_string()),
        }
    }
}

/// Generates train/dev examples, the retrievable passage collection and
/// topic-indicator passage embeddings, all determined by `seed`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut gen = Generator::new(config, seed);
    let mut train = Vec::with_capacity(config.n_train);
    for i in 0..config.n_train {
        train.push(Example::from_record(
            &gen.example(format!("train-{i:05}"))?,
        )?);
    }
    let mut dev = Vec::with_capacity(config.n_dev);
    for i in 0..config.n_dev {
        dev.push(Example::from_record(&gen.example(format!("dev-{i:05}"))?)?);
    }

    let mut passages: Vec<PassageRecord> = train
        .iter()
        .chain(&dev)
        .map(|ex| PassageRecord {
            id: ex.id.clone(),
            text: ex.passage.text.clone(),
            topic: ex.topic.clone(),
        })
        .collect();
    if config.recurrence {
        for ex in train.iter().chain(&dev) {
            let subject = SUBJECTS
                .iter()
                .position(|s| Some(*s) == ex.topic.as_deref())
                .expect("generated topic");
            for k in 0..config.support_passages {
                passages.push(gen.support_passage(format!("{}-s{k}", ex.id), subject));
            }
        }
    }

    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let dim = config.embedding_dim;
    let directions: Vec<Vec<f64>> = (0..SUBJECTS.len())
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut gen.rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut matrix = Array2::zeros((passages.len(), dim));
    for (row, p) in passages.iter().enumerate() {
        let topic = SUBJECTS
            .iter()
            .position(|s| Some(*s) == p.topic.as_deref())
            .expect("generated topic");
        for k in 0..dim {
            matrix[[row, k]] =
                directions[topic][k] + config.embedding_noise * normal.sample(&mut gen.rng);
        }
    }
    let embeddings = EmbeddingTable::new(passages.iter().map(|p| p.id.clone()).collect(), matrix)?;
    Ok(SyntheticCorpus {
        train,
        dev,
        passages,
        embeddings,
    })
}
