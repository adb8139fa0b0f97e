//! Passage retrieval for shared-normalization contexts: cosine ranking over
//! an external embedding table, the 50% discard rule, and a bag-of-embeddings
//! question encoder trained with a log-bilinear objective.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::{annotate_gt, contains_answer, Passage};
use crate::error::{Error, Result};
use crate::objectives::{marginal_xent, SpanTarget};
use crate::optim::{AdamW, AdamWConfig};

/// Dropout rate on the question vector during encoder training.
pub const DEFAULT_RETRIEVAL_DROPOUT: f64 = 0.35;

/// One embedding row per retrievable passage.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub matrix: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        if ids.len() != matrix.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                matrix.nrows()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite embedding".into()));
        }
        Ok(Self { ids, matrix })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Text form: a `rows dim` header line, then `id v₁ … v_d` per row.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.dim());
        for (id, row) in self.ids.iter().zip(self.matrix.rows()) {
            s.push_str(id);
            for v in row {
                write!(s, " {v:?}").expect("write to string");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty embedding file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("bad header {header:?}")))
            })
            .collect::<Result<_>>()?;
        let [rows, dim] = dims[..] else {
            return Err(Error::Format(format!("bad header {header:?}")));
        };
        let mut ids = Vec::with_capacity(rows);
        let mut values = Vec::with_capacity(rows * dim);
        for line in lines {
            let mut parts = line.split_whitespace();
            let id = parts.next().expect("non-empty line");
            ids.push(id.to_string());
            let row: Vec<f64> = parts
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Format(format!("bad value {t:?}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::Format(format!(
                    "row {id} has {} values, expected {dim}",
                    row.len()
                )));
            }
            values.extend(row);
        }
        if ids.len() != rows {
            return Err(Error::Format(format!(
                "header says {rows} rows, found {}",
                ids.len()
            )));
        }
        let matrix = Array2::from_shape_vec((rows, dim), values).expect("shape checked");
        Self::new(ids, matrix)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn cosine(a: &[f64], b: ndarray::ArrayView1<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Table rows ranked by descending cosine similarity to `q`, ties to the
/// lower row index. Zero-norm vectors score 0.
pub fn score_passages(q: &[f64], table: &EmbeddingTable) -> Result<Vec<(usize, f64)>> {
    if q.len() != table.dim() {
        return Err(Error::InvalidInput(format!(
            "question vector has dimension {}, table has {}",
            q.len(),
            table.dim()
        )));
    }
    let mut ranking: Vec<(usize, f64)> = table
        .matrix
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| (i, cosine(q, row)))
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranking)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPassage {
    pub passage_id: String,
    pub score: f64,
    pub gt: Vec<SpanTarget>,
}

/// Retrieved passages for one question with their distant-supervision sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub question_id: String,
    pub passages: Vec<ContextPassage>,
    /// Fewer than the requested number of passages survived the discard rule.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub short: bool,
}

impl ContextSet {
    pub fn has_supervision(&self) -> bool {
        self.passages.iter().any(|p| !p.gt.is_empty())
    }
}

/// Drops a uniformly random half (rounded down) of the ranked passages that
/// do not contain `answer`, then keeps the top `k` of what remains.
pub fn build_context<R: Rng + ?Sized>(
    question_id: &str,
    ranking: &[(usize, f64)],
    ids: &[String],
    passages: &[Passage],
    answer: &str,
    k: usize,
    rng: &mut R,
) -> Result<ContextSet> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "context size must be at least 1".into(),
        ));
    }
    if ids.len() != passages.len() {
        return Err(Error::InvalidInput(
            "passage ids and texts differ in length".into(),
        ));
    }
    let mut keep = vec![true; ranking.len()];
    let no_overlap: Vec<usize> = ranking
        .iter()
        .enumerate()
        .filter(|(_, &(row, _))| !contains_answer(&passages[row].text, answer))
        .map(|(pos, _)| pos)
        .collect();
    for i in sample(rng, no_overlap.len(), no_overlap.len() / 2) {
        keep[no_overlap[i]] = false;
    }
    let chosen: Vec<ContextPassage> = ranking
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .take(k)
        .map(|(&(row, score), _)| ContextPassage {
            passage_id: ids[row].clone(),
            score,
            gt: annotate_gt(&passages[row], answer),
        })
        .collect();
    Ok(ContextSet {
        question_id: question_id.to_string(),
        short: chosen.len() < k,
        passages: chosen,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalLoss {
    pub loss: f64,
    pub grad_q: Vec<f64>,
}

/// `−log softmax(D · dropout(q))[target]` with inverted dropout at rate
/// `dropout`; pass 0 to evaluate without dropout.
pub fn retrieval_loss<R: Rng + ?Sized>(
    q: &[f64],
    table: &EmbeddingTable,
    target: usize,
    dropout: f64,
    rng: &mut R,
) -> Result<RetrievalLoss> {
    if q.len() != table.dim() {
        return Err(Error::InvalidInput(
            "question vector dimension mismatch".into(),
        ));
    }
    if target >= table.len() {
        return Err(Error::InvalidTarget(format!(
            "passage {target} outside table of {} rows",
            table.len()
        )));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidInput(format!(
            "dropout must lie in [0, 1), got {dropout}"
        )));
    }
    let mask: Vec<f64> = if dropout > 0.0 {
        let keep = 1.0 / (1.0 - dropout);
        (0..q.len())
            .map(|_| {
                if rng.random::<f64>() < dropout {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    } else {
        vec![1.0; q.len()]
    };
    let dropped: Array1<f64> = q.iter().zip(&mask).map(|(a, m)| a * m).collect();
    let logits = table.matrix.dot(&dropped);
    let (loss, g_logits) = marginal_xent(logits.as_slice().expect("contiguous"), &[target]);
    let g_dropped = table.matrix.t().dot(&Array1::from(g_logits));
    let grad_q = g_dropped.iter().zip(&mask).map(|(g, m)| g * m).collect();
    Ok(RetrievalLoss { loss, grad_q })
}

/// Mean of per-word vectors; words outside the vocabulary are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionEncoder {
    pub vocab: BTreeMap<String, usize>,
    pub table: Array2<f64>,
}

impl QuestionEncoder {
    fn known(&self, question: &Passage) -> Vec<usize> {
        question
            .words()
            .filter_map(|w| self.vocab.get(w).copied())
            .collect()
    }

    pub fn encode(&self, question: &Passage) -> Vec<f64> {
        let rows = self.known(question);
        let mut v = vec![0.0; self.table.ncols()];
        if rows.is_empty() {
            return v;
        }
        for &r in &rows {
            for (acc, x) in v.iter_mut().zip(self.table.row(r)) {
                *acc += x;
            }
        }
        let n = rows.len() as f64;
        v.iter_mut().for_each(|x| *x /= n);
        v
    }
}

/// Fits a [`QuestionEncoder`] so that each question retrieves its paired
/// table row under [`retrieval_loss`].
pub fn train_question_encoder(
    pairs: &[(Passage, usize)],
    table: &EmbeddingTable,
    epochs: usize,
    optim: AdamWConfig,
    dropout: f64,
    seed: u64,
) -> Result<QuestionEncoder> {
    let mut vocab = BTreeMap::new();
    for (q, _) in pairs {
        for w in q.words() {
            let next = vocab.len();
            vocab.entry(w.to_string()).or_insert(next);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = table.dim();
    let table_init = Array2::from_shape_fn((vocab.len(), dim), |_| rng.random_range(-0.1..0.1));
    let mut encoder = QuestionEncoder {
        vocab,
        table: table_init,
    };
    let mut opt = AdamW::new(optim, &[encoder.table.len()]);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for &i in &order {
            let (question, target) = &pairs[i];
            let rows = encoder.known(question);
            if rows.is_empty() {
                continue;
            }
            let q = encoder.encode(question);
            let r = retrieval_loss(&q, table, *target, dropout, &mut rng)?;
            let mut grad = Array2::<f64>::zeros(encoder.table.dim());
            let n = rows.len() as f64;
            for &row in &rows {
                for (g, x) in grad.row_mut(row).iter_mut().zip(&r.grad_q) {
                    *g += x / n;
                }
            }
            let params = encoder.table.as_slice_mut().expect("contiguous");
            opt.update(&mut [params], &[grad.as_slice().expect("contiguous")])?;
        }
    }
    Ok(encoder)
}
