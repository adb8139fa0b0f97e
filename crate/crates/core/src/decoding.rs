//! Turning boundary scores into ranked answer spans.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Passage;
use crate::error::{Error, Result};
use crate::numerics::{softmax, vectorize, MaskPolicy, ScoreMatrix, ScoreVector};
use crate::objectives::{conditional_end_scores, end_domain, ConditionalHead, SpanTarget};

/// Default length-filter threshold ζ.
pub const DEFAULT_ZETA: usize = 30;
/// Default number of top spans considered by surface-form aggregation.
pub const DEFAULT_SF_TOP_K: usize = 100;
/// Default beam width for conditional decoding.
pub const DEFAULT_BEAM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanEntry {
    pub span: SpanTarget,
    /// Probability used for ranking.
    pub probability: f64,
    /// Unnormalized model mass: `P(i)·P(j)` for independent scores,
    /// `P(a_s)·P(a_e | a_s)` for beam candidates, the probability otherwise.
    pub score: f64,
}

/// Candidate spans ranked by probability, ties broken by earlier start and
/// then earlier end.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDistribution {
    entries: Vec<SpanEntry>,
    normalization: f64,
}

fn rank_order(a: &SpanEntry, b: &SpanEntry) -> Ordering {
    b.probability
        .total_cmp(&a.probability)
        .then(a.span.start.cmp(&b.span.start))
        .then(a.span.end.cmp(&b.span.end))
}

impl SpanDistribution {
    pub fn from_entries(mut entries: Vec<SpanEntry>) -> Self {
        entries.sort_by(rank_order);
        let normalization = entries.iter().map(|e| e.probability).sum();
        Self {
            entries,
            normalization,
        }
    }

    pub fn entries(&self) -> &[SpanEntry] {
        &self.entries
    }

    /// Total probability mass currently held by the entries.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn argmax(&self) -> Option<SpanTarget> {
        self.entries.first().map(|e| e.span)
    }

    pub fn probability_of(&self, span: SpanTarget) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.span == span)
            .map(|e| e.probability)
    }

    /// Multiplies every probability and score by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_entries(
            self.entries
                .iter()
                .map(|e| SpanEntry {
                    probability: e.probability * factor,
                    score: e.score * factor,
                    ..*e
                })
                .collect(),
        )
    }
}

/// Model outputs to decode, one variant per objective family.
#[derive(Debug, Clone, Copy)]
pub enum DecodeScores<'a> {
    /// `P(i, j) = P(a_s = i)·P(a_e = j)` over candidate spans.
    Independent {
        start: &'a ScoreVector,
        end: &'a ScoreVector,
        policy: MaskPolicy,
    },
    /// Softmax over the joint matrix (also used by the compound objective).
    Joint(&'a ScoreMatrix),
    /// Beam search over `P(a_s)·P(a_e | a_s)`.
    Conditional {
        start: &'a ScoreVector,
        h: &'a Array2<f64>,
        head: &'a ConditionalHead,
        beam: usize,
        policy: MaskPolicy,
    },
}

pub fn span_distribution(scores: DecodeScores<'_>) -> Result<SpanDistribution> {
    match scores {
        DecodeScores::Independent { start, end, policy } => {
            if start.len() != end.len() {
                return Err(Error::InvalidInput(
                    "start and end scores differ in length".into(),
                ));
            }
            let ps = softmax(start.as_slice())?;
            let pe = softmax(end.as_slice())?;
            let l = ps.len();
            let mut entries = Vec::new();
            for i in 0..l {
                for j in 0..l {
                    if policy.allows(i, j) {
                        entries.push(SpanEntry {
                            span: SpanTarget { start: i, end: j },
                            probability: 0.0,
                            score: ps[i] * pe[j],
                        });
                    }
                }
            }
            let mass: f64 = entries.iter().map(|e| e.score).sum();
            if !(mass > 0.0) {
                return Err(Error::Degenerate(
                    "no probability mass on candidate spans".into(),
                ));
            }
            for e in &mut entries {
                e.probability = e.score / mass;
            }
            Ok(SpanDistribution::from_entries(entries))
        }
        DecodeScores::Joint(matrix) => {
            let flat = vectorize(matrix)?;
            let probs = softmax(&flat.values)?;
            let entries = flat
                .index
                .iter()
                .zip(probs)
                .map(|(&(i, j), p)| SpanEntry {
                    span: SpanTarget { start: i, end: j },
                    probability: p,
                    score: p,
                })
                .collect();
            Ok(SpanDistribution::from_entries(entries))
        }
        DecodeScores::Conditional {
            start,
            h,
            head,
            beam,
            policy,
        } => beam_decode(start, h, head, beam, policy),
    }
}

/// Indices of the `k` largest values, ties to the lower index.
fn top_indices(values: &[f64], candidates: std::ops::Range<usize>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = candidates.collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Conditional decoding: the top-`k` starts, then the top-`k` ends under
/// `P(a_e | a_s)` for each, giving at most k² candidates ranked by
/// `P(a_s)·P(a_e | a_s)` renormalized over the candidate set.
pub fn beam_decode(
    start: &ScoreVector,
    h: &Array2<f64>,
    head: &ConditionalHead,
    k: usize,
    policy: MaskPolicy,
) -> Result<SpanDistribution> {
    if k == 0 {
        return Err(Error::InvalidInput("beam width must be at least 1".into()));
    }
    if start.len() != h.ncols() {
        return Err(Error::InvalidInput(
            "start scores and representations differ in length".into(),
        ));
    }
    let l = start.len();
    let ps = softmax(start.as_slice())?;
    let mut entries = Vec::new();
    for i in top_indices(&ps, 0..l, k) {
        let end_scores = conditional_end_scores(h, i, head)?;
        let domain = end_domain(l, i, policy);
        let offset = domain.start;
        let pe = softmax(&end_scores.as_slice()[domain])?;
        for j in top_indices(&pe, 0..pe.len(), k) {
            entries.push(SpanEntry {
                span: SpanTarget {
                    start: i,
                    end: j + offset,
                },
                probability: 0.0,
                score: ps[i] * pe[j],
            });
        }
    }
    let mass: f64 = entries.iter().map(|e| e.score).sum();
    for e in &mut entries {
        e.probability = e.score / mass;
    }
    Ok(SpanDistribution::from_entries(entries))
}

/// Zeroes spans with `end − start > zeta`; no renormalization.
pub fn length_filter(dist: &SpanDistribution, zeta: usize) -> SpanDistribution {
    let entries = dist
        .entries
        .iter()
        .map(|e| {
            if e.span.end - e.span.start > zeta {
                SpanEntry {
                    probability: 0.0,
                    score: 0.0,
                    ..*e
                }
            } else {
                *e
            }
        })
        .collect();
    SpanDistribution::from_entries(entries)
}

/// Within the top-`k` spans, moves all mass of each surface string onto its
/// most probable position and zeroes the rest. Spans outside the top-`k`
/// are untouched.
pub fn surface_form_filter(
    dist: &SpanDistribution,
    passage: &Passage,
    k: usize,
) -> SpanDistribution {
    let mut entries = dist.entries.clone();
    let top = k.min(entries.len());
    // entries are ranked, so the first occurrence of a string is its most probable position
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for idx in 0..top {
        let text = passage.span_text(entries[idx].span);
        match owner.get(text) {
            Some(&o) => {
                let (p, s) = (entries[idx].probability, entries[idx].score);
                entries[o].probability += p;
                entries[o].score += s;
                entries[idx].probability = 0.0;
                entries[idx].score = 0.0;
            }
            None => {
                owner.insert(text, idx);
            }
        }
    }
    SpanDistribution::from_entries(entries)
}

/// Which filters run before ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterPipeline {
    None,
    /// Length filtering.
    Lf,
    /// Length filtering, then surface-form aggregation.
    #[default]
    LfSf,
}

impl FilterPipeline {
    pub fn apply(
        self,
        dist: &SpanDistribution,
        passage: &Passage,
        zeta: usize,
        sf_k: usize,
    ) -> SpanDistribution {
        match self {
            FilterPipeline::None => dist.clone(),
            FilterPipeline::Lf => length_filter(dist, zeta),
            FilterPipeline::LfSf => surface_form_filter(&length_filter(dist, zeta), passage, sf_k),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FilterPipeline::None => "none",
            FilterPipeline::Lf => "lf",
            FilterPipeline::LfSf => "lf-sf",
        }
    }
}

impl fmt::Display for FilterPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterPipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(FilterPipeline::None),
            "lf" => Ok(FilterPipeline::Lf),
            "lf-sf" | "lf+sf" | "sf" => Ok(FilterPipeline::LfSf),
            other => Err(Error::Config(format!("unknown filter pipeline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub span: SpanTarget,
    pub text: String,
    pub probability: f64,
}

/// The `k` highest-ranked spans with their surface strings.
pub fn top_k(dist: &SpanDistribution, passage: &Passage, k: usize) -> Vec<Prediction> {
    dist.entries
        .iter()
        .take(k)
        .map(|e| Prediction {
            span: e.span,
            text: passage.span_text(e.span).to_string(),
            probability: e.probability,
        })
        .collect()
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub rank: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub probability: f64,
}

impl PredictionRecord {
    pub fn from_predictions(example_id: &str, predictions: &[Prediction]) -> Vec<Self> {
        predictions
            .iter()
            .enumerate()
            .map(|(rank, p)| PredictionRecord {
                example_id: example_id.to_string(),
                rank,
                start: p.span.start,
                end: p.span.end,
                text: p.text.clone(),
                probability: p.probability,
            })
            .collect()
    }
}

/// Index of the region containing `pos`, if any.
fn region_of(pos: usize, regions: &[SpanTarget]) -> Option<usize> {
    regions.iter().position(|r| r.start <= pos && pos <= r.end)
}

/// True when `span` starts inside one region and ends inside another.
pub fn is_cross_boundary(span: SpanTarget, regions: &[SpanTarget]) -> bool {
    match (region_of(span.start, regions), region_of(span.end, regions)) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossBoundaryReport {
    pub independent_span: SpanTarget,
    pub joint_span: SpanTarget,
    pub independent_crosses: bool,
    pub joint_crosses: bool,
}

impl CrossBoundaryReport {
    /// Independent decoding crossed regions while joint decoding did not.
    pub fn demonstrates_failure_mode(&self) -> bool {
        self.independent_crosses && !self.joint_crosses
    }
}

/// Decodes the same passage with independent and joint scores and reports
/// whether each argmax straddles two answer regions.
pub fn cross_boundary_fixture_check(
    start: &ScoreVector,
    end: &ScoreVector,
    joint: &ScoreMatrix,
    regions: &[SpanTarget],
) -> Result<CrossBoundaryReport> {
    let policy = if joint
        .mask()
        .indexed_iter()
        .all(|((i, j), &m)| m == (j >= i))
    {
        MaskPolicy::ValidSpans
    } else {
        MaskPolicy::Unmasked
    };
    let indep = span_distribution(DecodeScores::Independent { start, end, policy })?;
    let joint = span_distribution(DecodeScores::Joint(joint))?;
    let independent_span = indep.argmax().expect("non-empty distribution");
    let joint_span = joint.argmax().expect("non-empty distribution");
    Ok(CrossBoundaryReport {
        independent_span,
        joint_span,
        independent_crosses: is_cross_boundary(independent_span, regions),
        joint_crosses: is_cross_boundary(joint_span, regions),
    })
}
