//! Toy boundary encoder with hand-derived gradients.
//!
//! Each passage token `t` gets the feature
//! `[e_{t-1}; e_t; e_{t+1}; e_{t-1}∘q; e_t∘q; e_{t+1}∘q; q]` (zero outside the
//! passage), where `q` is the mean question embedding. An affine map and tanh
//! give `H` (`d × L`). Boundary logits are `w_sᵀH + b_s` and `w_eᵀH + b_e`;
//! joint scores use `H_s = W H + b`, `H_e = H` under the configured similarity;
//! the conditional head reads `H` directly.

mod checkpoint;
mod train;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use train::{
    dss_instances, dss_loss, train, train_dss, train_step, DssInstance, DssScope, EpochLog,
    TrainConfig, TrainItem, TrainLog, TrainState,
};

use crate::data::{Example, Passage};
use crate::decoding::{span_distribution, DecodeScores, SpanDistribution};
use crate::error::{Error, Result};
use crate::numerics::{MaskPolicy, ScoreMatrix, ScoreVector};
use crate::objectives::{
    compound_loss, conditional_loss, independent_loss, joint_loss, ConditionalGrads,
    ConditionalHead, LossResult, SpanTarget,
};
use crate::similarity::{
    bert_joint_reps, span_scores, span_scores_backward, BoundaryRepresentations, SimilarityKind,
    SimilarityParams,
};

/// Number of `d`-sized slots in a token feature.
pub const FEATURE_SLOTS: usize = 7;

pub const UNK: &str = "<unk>";

/// Token strings to ids; id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Sorted vocabulary over every token of `texts`, after `<unk>`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a Passage>) -> Self {
        let mut set = BTreeSet::new();
        for p in texts {
            for t in &p.tokens {
                set.insert(t.text.clone());
            }
        }
        set.remove(UNK);
        let tokens = std::iter::once(UNK.to_string()).chain(set).collect();
        Self::from_tokens(tokens).expect("vocabulary starts with <unk>")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Format(format!("vocabulary must start with {UNK}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary entry {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, passage: &Passage) -> Vec<usize> {
        passage.tokens.iter().map(|t| self.id(&t.text)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "I")]
    Independent,
    #[serde(rename = "J")]
    Joint,
    #[serde(rename = "JC")]
    JointConditional,
    #[default]
    #[serde(rename = "I+J")]
    Compound,
    #[serde(rename = "I+J-DSS")]
    CompoundDss,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::Independent,
        ObjectiveKind::Joint,
        ObjectiveKind::JointConditional,
        ObjectiveKind::Compound,
        ObjectiveKind::CompoundDss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Independent => "I",
            ObjectiveKind::Joint => "J",
            ObjectiveKind::JointConditional => "JC",
            ObjectiveKind::Compound => "I+J",
            ObjectiveKind::CompoundDss => "I+J-DSS",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown objective {s:?}")))
    }
}

/// Parameter block names, in serialization and optimizer order.
pub const BLOCK_NAMES: [&str; 13] = [
    "embedding",
    "mix_w",
    "mix_b",
    "start_w",
    "start_b",
    "end_w",
    "end_b",
    "joint_w",
    "joint_b",
    "sim_w",
    "cond_w",
    "cond_b",
    "cond_wc",
];

/// All trainable parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `V × d`
    pub embedding: Array2<f64>,
    /// `d × 7d`
    pub mix_w: Array2<f64>,
    pub mix_b: Array1<f64>,
    pub start_w: Array1<f64>,
    /// Length 1.
    pub start_b: Array1<f64>,
    pub end_w: Array1<f64>,
    pub end_b: Array1<f64>,
    /// `d × d`
    pub joint_w: Array2<f64>,
    pub joint_b: Array1<f64>,
    pub sim: SimilarityParams,
    /// `m = d`
    pub cond: ConditionalHead,
}

impl ModelParams {
    pub fn zeros(vocab: usize, d: usize, similarity: SimilarityKind) -> Self {
        Self {
            embedding: Array2::zeros((vocab, d)),
            mix_w: Array2::zeros((d, FEATURE_SLOTS * d)),
            mix_b: Array1::zeros(d),
            start_w: Array1::zeros(d),
            start_b: Array1::zeros(1),
            end_w: Array1::zeros(d),
            end_b: Array1::zeros(1),
            joint_w: Array2::zeros((d, d)),
            joint_b: Array1::zeros(d),
            sim: SimilarityParams::new(similarity, Array1::zeros(similarity.weight_len(d))),
            cond: ConditionalHead::zeros(d, d),
        }
    }

    /// Gaussian weights scaled by `1/√fan_in`, unit-variance embeddings, zero biases.
    pub fn init(vocab: usize, d: usize, similarity: SimilarityKind, seed: u64) -> Result<Self> {
        if vocab == 0 || d == 0 {
            return Err(Error::Config(
                "vocabulary and dimension must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut fill = |a: &mut [f64], scale: f64| {
            for v in a {
                *v = normal.sample(&mut rng) * scale;
            }
        };
        let mut p = Self::zeros(vocab, d, similarity);
        let df = d as f64;
        fill(slice_mut(&mut p.embedding), 1.0);
        fill(
            slice_mut(&mut p.mix_w),
            1.0 / (FEATURE_SLOTS as f64 * df).sqrt(),
        );
        fill(slice_mut(&mut p.start_w), 1.0 / df.sqrt());
        fill(slice_mut(&mut p.end_w), 1.0 / df.sqrt());
        fill(slice_mut(&mut p.joint_w), 1.0 / df.sqrt());
        fill(slice_mut(&mut p.sim.w), 1.0 / df.sqrt());
        fill(slice_mut(&mut p.cond.w), 1.0 / (2.0 * df).sqrt());
        fill(slice_mut(&mut p.cond.w_c), 1.0 / df.sqrt());
        Ok(p)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.dim(), self.sim.kind)
    }

    /// `(rows, cols)` of every block, vectors as `(len, 1)`.
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        let v = |a: &Array1<f64>| (a.len(), 1);
        vec![
            self.embedding.dim(),
            self.mix_w.dim(),
            v(&self.mix_b),
            v(&self.start_w),
            v(&self.start_b),
            v(&self.end_w),
            v(&self.end_b),
            self.joint_w.dim(),
            v(&self.joint_b),
            v(&self.sim.w),
            self.cond.w.dim(),
            v(&self.cond.b),
            v(&self.cond.w_c),
        ]
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        vec![
            slice(&self.embedding),
            slice(&self.mix_w),
            slice(&self.mix_b),
            slice(&self.start_w),
            slice(&self.start_b),
            slice(&self.end_w),
            slice(&self.end_b),
            slice(&self.joint_w),
            slice(&self.joint_b),
            slice(&self.sim.w),
            slice(&self.cond.w),
            slice(&self.cond.b),
            slice(&self.cond.w_c),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice_mut(&mut self.embedding),
            slice_mut(&mut self.mix_w),
            slice_mut(&mut self.mix_b),
            slice_mut(&mut self.start_w),
            slice_mut(&mut self.start_b),
            slice_mut(&mut self.end_w),
            slice_mut(&mut self.end_b),
            slice_mut(&mut self.joint_w),
            slice_mut(&mut self.joint_b),
            slice_mut(&mut self.sim.w),
            slice_mut(&mut self.cond.w),
            slice_mut(&mut self.cond.b),
            slice_mut(&mut self.cond.w_c),
        ]
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.len()).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.block_sizes().iter().sum();
        if flat.len() != total {
            return Err(Error::InvalidInput(format!(
                "flat parameter vector of length {} for a model with {total} parameters",
                flat.len()
            )));
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += factor · other`, block by block.
    pub fn add_scaled(&mut self, other: &ModelParams, factor: f64) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored contiguously")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut()
        .expect("parameters are stored contiguously")
}

/// Intermediate values of one forward pass, reused by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub question: Vec<usize>,
    pub passage: Vec<usize>,
    /// Mean question embedding.
    pub q: Array1<f64>,
    /// `7d × L` token features.
    pub x: Array2<f64>,
    /// `d × L` passage representation.
    pub h: Array2<f64>,
    pub reps: BoundaryRepresentations,
    pub start: ScoreVector,
    pub end: ScoreVector,
    pub joint: ScoreMatrix,
}

fn check_ids(ids: &[usize], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&id| id >= vocab) {
        Some(&id) => Err(Error::Vocabulary { id, vocab }),
        None => Ok(()),
    }
}

/// Window offsets of the three token slots.
const WINDOW: [isize; 3] = [-1, 0, 1];

fn neighbour(t: usize, offset: isize, len: usize) -> Option<usize> {
    let pos = t as isize + offset;
    (0..len as isize).contains(&pos).then_some(pos as usize)
}

pub fn forward(
    params: &ModelParams,
    question: &[usize],
    passage: &[usize],
    policy: MaskPolicy,
) -> Result<ForwardCache> {
    if question.is_empty() || passage.is_empty() {
        return Err(Error::InvalidInput(
            "question and passage must be non-empty".into(),
        ));
    }
    let vocab = params.vocab_size();
    check_ids(question, vocab)?;
    check_ids(passage, vocab)?;
    let d = params.dim();
    let l = passage.len();
    let emb = &params.embedding;

    let mut q = Array1::zeros(d);
    for &id in question {
        q += &emb.row(id);
    }
    q /= question.len() as f64;

    let mut x = Array2::zeros((FEATURE_SLOTS * d, l));
    for t in 0..l {
        let mut col = x.column_mut(t);
        for (slot, &offset) in WINDOW.iter().enumerate() {
            if let Some(pos) = neighbour(t, offset, l) {
                let e = emb.row(passage[pos]);
                col.slice_mut(s![slot * d..(slot + 1) * d]).assign(&e);
                col.slice_mut(s![(slot + 3) * d..(slot + 4) * d])
                    .assign(&(&e * &q));
            }
        }
        col.slice_mut(s![6 * d..]).assign(&q);
    }

    let mut h = params.mix_w.dot(&x);
    h += &params.mix_b.view().insert_axis(Axis(1));
    h.mapv_inplace(f64::tanh);

    let start = ScoreVector::new((params.start_w.dot(&h) + params.start_b[0]).to_vec())?;
    let end = ScoreVector::new((params.end_w.dot(&h) + params.end_b[0]).to_vec())?;
    let reps = bert_joint_reps(&h, &params.joint_w, &params.joint_b)?;
    let joint = span_scores(&reps, &params.sim, policy)?;
    Ok(ForwardCache {
        question: question.to_vec(),
        passage: passage.to_vec(),
        q,
        x,
        h,
        reps,
        start,
        end,
        joint,
    })
}

/// Chain rule from score gradients back to every parameter.
///
/// `loss.grad_end` is applied to the end logits; conditional-head gradients
/// (which already include their `∂/∂H`) come in through `cond`.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    loss: &LossResult,
    cond: Option<&ConditionalGrads>,
) -> Result<ModelParams> {
    let d = params.dim();
    let l = cache.passage.len();
    if cache.h.dim() != (d, l) || cache.x.nrows() != FEATURE_SLOTS * d {
        return Err(Error::InvalidInput(
            "forward cache does not match the parameters".into(),
        ));
    }
    let mut g = params.zeros_like();
    let mut g_h: Array2<f64> = Array2::zeros((d, l));

    let boundary = |grad: &Option<Vec<f64>>,
                    w: &Array1<f64>,
                    g_w: &mut Array1<f64>,
                    g_b: &mut Array1<f64>,
                    g_h: &mut Array2<f64>|
     -> Result<()> {
        if let Some(gs) = grad {
            if gs.len() != l {
                return Err(Error::InvalidInput(
                    "boundary gradient length mismatch".into(),
                ));
            }
            let gs = ndarray::ArrayView1::from(gs.as_slice());
            *g_w += &cache.h.dot(&gs);
            g_b[0] += gs.sum();
            *g_h += &w.view().insert_axis(Axis(1)).dot(&gs.insert_axis(Axis(0)));
        }
        Ok(())
    };
    boundary(
        &loss.grad_start,
        &params.start_w,
        &mut g.start_w,
        &mut g.start_b,
        &mut g_h,
    )?;
    boundary(
        &loss.grad_end,
        &params.end_w,
        &mut g.end_w,
        &mut g.end_b,
        &mut g_h,
    )?;

    if let Some(gj) = &loss.grad_joint {
        if gj.dim() != (l, l) {
            return Err(Error::InvalidInput("joint gradient shape mismatch".into()));
        }
        let sg = span_scores_backward(&cache.reps, &params.sim, gj)?;
        g.sim.w.assign(&sg.w);
        g.joint_w.assign(&sg.start.dot(&cache.h.t()));
        g.joint_b.assign(&sg.start.sum_axis(Axis(1)));
        g_h += &params.joint_w.t().dot(&sg.start);
        g_h += &sg.end;
    }

    if let Some(cg) = cond {
        if cg.h.dim() != (d, l) {
            return Err(Error::InvalidInput(
                "conditional gradient shape mismatch".into(),
            ));
        }
        g_h += &cg.h;
        g.cond.w.assign(&cg.w);
        g.cond.b.assign(&cg.b);
        g.cond.w_c.assign(&cg.w_c);
    }

    // through tanh and the affine mix
    let mut g_z = g_h;
    g_z.zip_mut_with(&cache.h, |gz, &hv| *gz *= 1.0 - hv * hv);
    g.mix_w.assign(&g_z.dot(&cache.x.t()));
    g.mix_b.assign(&g_z.sum_axis(Axis(1)));
    let g_x = params.mix_w.t().dot(&g_z);

    // through the feature construction to the embeddings
    let emb = &params.embedding;
    let mut g_q: Array1<f64> = Array1::zeros(d);
    for t in 0..l {
        let col = g_x.column(t);
        for (slot, &offset) in WINDOW.iter().enumerate() {
            if let Some(pos) = neighbour(t, offset, l) {
                let id = cache.passage[pos];
                let direct = col.slice(s![slot * d..(slot + 1) * d]);
                let gated = col.slice(s![(slot + 3) * d..(slot + 4) * d]);
                let mut row = g.embedding.row_mut(id);
                row += &direct;
                row += &(&gated * &cache.q);
                g_q += &(&gated * &emb.row(id));
            }
        }
        g_q += &col.slice(s![6 * d..]);
    }
    g_q /= cache.question.len() as f64;
    for &id in &cache.question {
        let mut row = g.embedding.row_mut(id);
        row += &g_q;
    }
    Ok(g)
}

/// Loss and parameter gradient of `objective` on one example.
/// [`ObjectiveKind::CompoundDss`] falls back to the compound loss here.
pub fn example_loss(
    params: &ModelParams,
    question: &[usize],
    passage: &[usize],
    target: SpanTarget,
    objective: ObjectiveKind,
    policy: MaskPolicy,
) -> Result<(f64, ModelParams)> {
    let cache = forward(params, question, passage, policy)?;
    match objective {
        ObjectiveKind::Independent => {
            let r = independent_loss(&cache.start, &cache.end, target)?;
            Ok((r.loss, backward(params, &cache, &r, None)?))
        }
        ObjectiveKind::Joint => {
            let r = joint_loss(&cache.joint, target)?;
            Ok((r.loss, backward(params, &cache, &r, None)?))
        }
        ObjectiveKind::Compound | ObjectiveKind::CompoundDss => {
            let r = compound_loss(&cache.start, &cache.end, &cache.joint, target)?;
            Ok((r.loss, backward(params, &cache, &r, None)?))
        }
        ObjectiveKind::JointConditional => {
            let c = conditional_loss(&cache.start, &cache.h, &params.cond, target, policy)?;
            // grad_end here is w.r.t. the conditional end scores, already in c.grads
            let r = LossResult {
                grad_end: None,
                ..c.result
            };
            Ok((r.loss, backward(params, &cache, &r, Some(&c.grads))?))
        }
    }
}

/// Span distribution used at test time: independent product for I, beam
/// search for JC, and the joint softmax otherwise.
pub fn predict_distribution(
    params: &ModelParams,
    question: &[usize],
    passage: &[usize],
    objective: ObjectiveKind,
    policy: MaskPolicy,
    beam: usize,
) -> Result<SpanDistribution> {
    let cache = forward(params, question, passage, policy)?;
    let scores = match objective {
        ObjectiveKind::Independent => DecodeScores::Independent {
            start: &cache.start,
            end: &cache.end,
            policy,
        },
        ObjectiveKind::JointConditional => DecodeScores::Conditional {
            start: &cache.start,
            h: &cache.h,
            head: &params.cond,
            beam,
            policy,
        },
        ObjectiveKind::Joint | ObjectiveKind::Compound | ObjectiveKind::CompoundDss => {
            DecodeScores::Joint(&cache.joint)
        }
    };
    span_distribution(scores)
}

/// Most probable span for `example`.
pub fn predict_span(
    params: &ModelParams,
    vocab: &Vocab,
    example: &Example,
    objective: ObjectiveKind,
    policy: MaskPolicy,
    beam: usize,
) -> Result<SpanTarget> {
    let dist = predict_distribution(
        params,
        &vocab.encode(&example.question),
        &vocab.encode(&example.passage),
        objective,
        policy,
        beam,
    )?;
    dist.argmax()
        .ok_or_else(|| Error::Degenerate(format!("no candidate span for {}", example.id)))
}

#[cfg(test)]
mod tests;
