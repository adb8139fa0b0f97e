//! SQuAD-style exact match and token F1, aggregate reports, and the
//! average-length analysis over the top predicted spans.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of top spans averaged by [`avg_topk_span_length`].
pub const DEFAULT_LENGTH_TOP_K: usize = 20;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the as whole
/// words, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();

    // replace every maximal word-character run equal to an article with a space
    let mut no_articles = String::with_capacity(no_punct.len());
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut String| {
        if matches!(run.as_str(), "a" | "an" | "the") {
            out.push(' ');
        } else {
            out.push_str(run);
        }
        run.clear();
    };
    for c in no_punct.chars() {
        if is_word_char(c) {
            run.push(c);
        } else {
            flush(&mut run, &mut no_articles);
            no_articles.push(c);
        }
    }
    flush(&mut run, &mut no_articles);

    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p: Vec<&str> = prediction.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p == g));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / p.len() as f64;
    let recall = same as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match and F1 of `prediction` against the best-matching gold answer.
pub fn em_f1(prediction: &str, golds: &[String]) -> Result<(bool, f64)> {
    if golds.is_empty() {
        return Err(Error::InvalidInput("empty gold answer list".into()));
    }
    let pred = normalize_answer(prediction);
    let mut em = false;
    let mut f1 = 0.0f64;
    for gold in golds {
        let g = normalize_answer(gold);
        em |= pred == g;
        f1 = f1.max(token_f1(&pred, &g));
    }
    Ok((em, f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub id: String,
    pub em: bool,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Percentage in [0, 100].
    pub em: f64,
    /// Percentage in [0, 100].
    pub f1: f64,
    pub n: usize,
    pub per_example: Vec<ExampleOutcome>,
}

/// Scores `(id, prediction, golds)` triples.
pub fn evaluate<'a, I>(items: I) -> Result<MetricReport>
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a [String])>,
{
    let mut per_example = Vec::new();
    for (id, prediction, golds) in items {
        let (em, f1) = em_f1(prediction, golds)?;
        per_example.push(ExampleOutcome {
            id: id.to_string(),
            em,
            f1,
        });
    }
    if per_example.is_empty() {
        return Err(Error::InvalidInput("no predictions to evaluate".into()));
    }
    let n = per_example.len();
    let em_hits = per_example.iter().filter(|o| o.em).count();
    let f1_sum: f64 = per_example.iter().map(|o| o.f1).sum();
    Ok(MetricReport {
        label: None,
        seed: None,
        em: 100.0 * em_hits as f64 / n as f64,
        f1: 100.0 * f1_sum / n as f64,
        n,
        per_example,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanLengthStat {
    pub id: String,
    /// Mean character length of the averaged answer strings.
    pub mean_chars: f64,
    pub count: usize,
    /// Fewer than `k` predictions were available.
    pub short: bool,
}

/// Mean character length of the top-`k` predicted strings for one example.
pub fn avg_topk_span_length(id: &str, predictions: &[String], k: usize) -> Result<SpanLengthStat> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let top = &predictions[..k.min(predictions.len())];
    if top.is_empty() {
        return Err(Error::InvalidInput(format!(
            "example {id} has no predictions"
        )));
    }
    let total: usize = top.iter().map(|s| s.chars().count()).sum();
    Ok(SpanLengthStat {
        id: id.to_string(),
        mean_chars: total as f64 / top.len() as f64,
        count: top.len(),
        short: top.len() < k,
    })
}

/// Counts per bin `[bin·width, (bin+1)·width)`, empty bins omitted, ascending.
pub fn length_histogram(stats: &[SpanLengthStat], bin_width: f64) -> Vec<(f64, usize)> {
    let mut bins: std::collections::BTreeMap<i64, usize> = Default::default();
    for s in stats {
        *bins
            .entry((s.mean_chars / bin_width).floor() as i64)
            .or_default() += 1;
    }
    bins.into_iter()
        .map(|(b, c)| (b as f64 * bin_width, c))
        .collect()
}

/// Two-column `bin_start,count` rows with a header line.
pub fn histogram_csv(rows: &[(f64, usize)]) -> String {
    let mut s = String::from("bin_start,count\n");
    for (b, c) in rows {
        writeln!(s, "{b},{c}").expect("write to string");
    }
    s
}
