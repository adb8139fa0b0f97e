//! Examples, dataset files, distant supervision, retrieval-based context
//! construction and the synthetic corpus generator.

mod retrieval;
mod synth;
mod text;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use retrieval::{
    build_context, retrieval_loss, score_passages, train_question_encoder, ContextPassage,
    ContextSet, EmbeddingTable, QuestionEncoder, RetrievalLoss, DEFAULT_RETRIEVAL_DROPOUT,
};
pub use synth::{generate_synthetic, SyntheticConfig, SyntheticCorpus};
pub use text::{annotate_gt, contains_answer, tokenize, Passage, Token};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::objectives::SpanTarget;

/// An answer-like string planted in the passage with its character offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub text: String,
    pub start: usize,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub question: String,
    pub passage: String,
    pub answers: Vec<String>,
    /// Character offsets of each answer in `passage`.
    pub answer_starts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CandidateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

/// A tokenized question/passage pair with its gold answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub question: Passage,
    pub passage: Passage,
    pub answers: Vec<String>,
    pub answer_starts: Vec<usize>,
    /// Training target: the first answer occurrence.
    pub gold: SpanTarget,
    /// Token spans of every planted answer candidate, gold included.
    pub candidates: Vec<SpanTarget>,
    pub topic: Option<String>,
}

impl Example {
    pub fn from_record(record: &ExampleRecord) -> Result<Self> {
        if record.answers.is_empty() {
            return Err(Error::Format(format!(
                "example {} has no answers",
                record.id
            )));
        }
        let passage = Passage::new(record.passage.clone());
        let question = Passage::new(record.question.clone());
        let from_offset = record.answer_starts.first().and_then(|&start| {
            passage
                .span_from_chars(start, record.answers[0].chars().count())
                .filter(|s| {
                    passage
                        .span_text(*s)
                        .eq_ignore_ascii_case(record.answers[0].trim())
                })
        });
        let gold = match from_offset {
            Some(s) => s,
            None => record
                .answers
                .iter()
                .find_map(|a| annotate_gt(&passage, a).first().copied())
                .ok_or_else(|| {
                    Error::Format(format!(
                        "example {}: no answer occurs in the passage",
                        record.id
                    ))
                })?,
        };
        let candidates = record
            .candidates
            .iter()
            .map(|c| {
                passage
                    .span_from_chars(c.start, c.text.chars().count())
                    .ok_or_else(|| {
                        Error::Format(format!(
                            "example {}: candidate {:?} at {} is not token-aligned",
                            record.id, c.text, c.start
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: record.id.clone(),
            question,
            passage,
            answers: record.answers.clone(),
            answer_starts: record.answer_starts.clone(),
            gold,
            candidates,
            topic: record.topic.clone(),
        })
    }

    pub fn to_record(&self) -> ExampleRecord {
        let char_start = |byte: usize| self.passage.text[..byte].chars().count();
        ExampleRecord {
            id: self.id.clone(),
            question: self.question.text.clone(),
            passage: self.passage.text.clone(),
            answers: self.answers.clone(),
            answer_starts: self.answer_starts.clone(),
            candidates: self
                .candidates
                .iter()
                .map(|&c| CandidateRecord {
                    text: self.passage.span_text(c).to_string(),
                    start: char_start(self.passage.tokens[c.start].start),
                })
                .collect(),
            topic: self.topic.clone(),
        }
    }

    /// All occurrences of any gold answer string.
    pub fn gt_spans(&self) -> Vec<SpanTarget> {
        let mut spans: Vec<SpanTarget> = self
            .answers
            .iter()
            .flat_map(|a| annotate_gt(&self.passage, a))
            .collect();
        spans.sort_unstable();
        spans.dedup();
        spans
    }
}

/// A retrievable passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassageRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

pub fn read_examples(path: &Path) -> Result<Vec<Example>> {
    read_jsonl::<ExampleRecord>(path)?
        .iter()
        .map(Example::from_record)
        .collect()
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let records: Vec<ExampleRecord> = examples.iter().map(Example::to_record).collect();
    write_jsonl(path, &records)
}

pub fn read_passages(path: &Path) -> Result<Vec<PassageRecord>> {
    read_jsonl(path)
}

pub fn write_passages(path: &Path, passages: &[PassageRecord]) -> Result<()> {
    write_jsonl(path, passages)
}

pub fn read_contexts(path: &Path) -> Result<Vec<ContextSet>> {
    read_jsonl(path)
}

pub fn write_contexts(path: &Path, contexts: &[ContextSet]) -> Result<()> {
    write_jsonl(path, contexts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> ExampleRecord {
        ExampleRecord {
            id: "q1".into(),
            question: "What did alpha drop?".into(),
            passage: "Alpha dropped \"Little Boy\" and beta dropped Fat Man.".into(),
            answers: vec!["Little Boy".into()],
            answer_starts: vec![15],
            candidates: vec![
                CandidateRecord {
                    text: "Little Boy".into(),
                    start: 15,
                },
                CandidateRecord {
                    text: "Fat Man".into(),
                    start: 44,
                },
            ],
            topic: Some("t0".into()),
        }
    }

    #[test]
    fn record_roundtrip() {
        let ex = Example::from_record(&record()).unwrap();
        assert_eq!(ex.passage.span_text(ex.gold), "Little Boy");
        assert_eq!(ex.candidates.len(), 2);
        assert_eq!(ex.passage.span_text(ex.candidates[1]), "Fat Man");
        assert_eq!(ex.to_record(), record());
    }

    #[test]
    fn gold_falls_back_to_first_occurrence() {
        let mut r = record();
        r.answer_starts.clear();
        r.candidates.clear();
        let ex = Example::from_record(&r).unwrap();
        assert_eq!(ex.passage.span_text(ex.gold), "Little Boy");
    }

    #[test]
    fn rejects_missing_answer() {
        let mut r = record();
        r.answers = vec!["enola gay".into()];
        r.answer_starts.clear();
        r.candidates.clear();
        assert!(matches!(Example::from_record(&r), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_fields_rejected() {
        let line = r#"{"id":"x","question":"q","passage":"p","answers":["p"],"answer_starts":[0],"extra":1}"#;
        assert!(serde_json::from_str::<ExampleRecord>(line).is_err());
    }
}
