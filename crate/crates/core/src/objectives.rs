//! Negative log-likelihood objectives over span boundaries with analytic
//! gradients with respect to the scores that produced them.
//!
//! Every objective reduces to [`marginal_xent`]: a softmax over one
//! normalization domain whose numerator is marginalized over a set of target
//! positions. A single target gives ordinary cross-entropy; several targets
//! pooled across passages give the shared-normalization objective.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_finite, vectorize, MaskPolicy, ScoreMatrix, ScoreVector};

/// Answer endpoints, end inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpanTarget {
    pub start: usize,
    pub end: usize,
}

impl SpanTarget {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end < start {
            return Err(Error::InvalidTarget(format!(
                "span end {end} precedes start {start}"
            )));
        }
        Ok(Self { start, end })
    }

    /// Token count covered by the span.
    pub fn token_len(&self) -> usize {
        self.end - self.start + 1
    }

    fn check_range(&self, len: usize) -> Result<()> {
        if self.start > self.end || self.end >= len {
            return Err(Error::InvalidTarget(format!(
                "span ({}, {}) outside passage of length {len}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Loss value plus gradients for the score inputs the objective consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    pub grad_start: Option<Vec<f64>>,
    pub grad_end: Option<Vec<f64>>,
    pub grad_joint: Option<Array2<f64>>,
}

impl LossResult {
    /// Multiplies the loss and every gradient by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.loss *= factor;
        for g in [&mut self.grad_start, &mut self.grad_end]
            .into_iter()
            .flatten()
        {
            g.iter_mut().for_each(|v| *v *= factor);
        }
        if let Some(g) = &mut self.grad_joint {
            g.mapv_inplace(|v| v * factor);
        }
        self
    }
}

/// `−log Σ_{t∈targets} softmax(scores)_t` and its gradient
/// `softmax(scores) − softmax(scores restricted to targets)`.
///
/// `targets` must be non-empty, in range and free of duplicates.
pub(crate) fn marginal_xent(scores: &[f64], targets: &[usize]) -> (f64, Vec<f64>) {
    debug_assert!(!targets.is_empty());
    let max_all = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max_all).exp()).collect();
    let total: f64 = exps.iter().sum();
    let lse_all = max_all + total.ln();

    let max_gt = targets
        .iter()
        .map(|&t| scores[t])
        .fold(f64::NEG_INFINITY, f64::max);
    let gt_exps: Vec<f64> = targets
        .iter()
        .map(|&t| (scores[t] - max_gt).exp())
        .collect();
    let gt_total: f64 = gt_exps.iter().sum();
    let lse_gt = max_gt + gt_total.ln();

    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    for (&t, e) in targets.iter().zip(&gt_exps) {
        grad[t] -= e / gt_total;
    }
    (lse_all - lse_gt, grad)
}

/// Independent objective: `−log P(a_s) − log P(a_e)` with one softmax per boundary.
pub fn independent_loss(
    start: &ScoreVector,
    end: &ScoreVector,
    target: SpanTarget,
) -> Result<LossResult> {
    if start.len() != end.len() {
        return Err(Error::InvalidInput(format!(
            "start and end scores differ in length ({} vs {})",
            start.len(),
            end.len()
        )));
    }
    target.check_range(start.len())?;
    let (ls, gs) = marginal_xent(start.as_slice(), &[target.start]);
    let (le, ge) = marginal_xent(end.as_slice(), &[target.end]);
    Ok(LossResult {
        loss: ls + le,
        grad_start: Some(gs),
        grad_end: Some(ge),
        grad_joint: None,
    })
}

/// Joint objective: `−log softmax(vec(S))[target]` over the unmasked spans.
pub fn joint_loss(scores: &ScoreMatrix, target: SpanTarget) -> Result<LossResult> {
    target.check_range(scores.len())?;
    let flat = vectorize(scores)?;
    let pos = flat.position(target.start, target.end).ok_or_else(|| {
        Error::InvalidTarget(format!("span ({}, {}) is masked", target.start, target.end))
    })?;
    let (loss, grad) = marginal_xent(&flat.values, &[pos]);
    Ok(LossResult {
        loss,
        grad_start: None,
        grad_end: None,
        grad_joint: Some(flat.scatter(&grad, 0.0)),
    })
}

/// Compound objective `−log P(a_s, a_e) − log P(a_s) − log P(a_e)`.
pub fn compound_loss(
    start: &ScoreVector,
    end: &ScoreVector,
    scores: &ScoreMatrix,
    target: SpanTarget,
) -> Result<LossResult> {
    compound_loss_weighted(start, end, scores, target, 1.0)
}

/// Compound objective with weight `aux_weight` on the independent term.
pub fn compound_loss_weighted(
    start: &ScoreVector,
    end: &ScoreVector,
    scores: &ScoreMatrix,
    target: SpanTarget,
    aux_weight: f64,
) -> Result<LossResult> {
    if scores.len() != start.len() {
        return Err(Error::InvalidInput(format!(
            "joint scores are {0}x{0} but boundary scores have length {1}",
            scores.len(),
            start.len()
        )));
    }
    let joint = joint_loss(scores, target)?;
    let independent = independent_loss(start, end, target)?;
    let aux = if aux_weight == 1.0 {
        independent
    } else {
        independent.scaled(aux_weight)
    };
    Ok(LossResult {
        loss: joint.loss + aux.loss,
        grad_start: aux.grad_start,
        grad_end: aux.grad_end,
        grad_joint: joint.grad_joint,
    })
}

/// End-given-start head: `w_cᵀ tanh(W [h_k; h_start] + b)` for every position `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalHead {
    /// `m × 2d`
    pub w: Array2<f64>,
    /// `m`
    pub b: Array1<f64>,
    /// `m`
    pub w_c: Array1<f64>,
}

impl ConditionalHead {
    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            w: Array2::zeros((m, 2 * d)),
            b: Array1::zeros(m),
            w_c: Array1::zeros(m),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        let m = self.w.nrows();
        if self.w.ncols() != 2 * d || self.b.len() != m || self.w_c.len() != m {
            return Err(Error::InvalidInput(format!(
                "conditional head expects W m x {}, b and w_c of length m; got W {:?}, b {}, w_c {}",
                2 * d,
                self.w.dim(),
                self.b.len(),
                self.w_c.len()
            )));
        }
        Ok(())
    }
}

/// Parameter and representation gradients of the conditional head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGrads {
    pub h: Array2<f64>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub w_c: Array1<f64>,
}

/// Hidden activations `tanh(W C + b)`, one column per position.
fn conditional_hidden(h: &Array2<f64>, start_index: usize, head: &ConditionalHead) -> Array2<f64> {
    let d = h.nrows();
    let w_tok = head.w.slice(s![.., ..d]);
    let w_start = head.w.slice(s![.., d..]);
    // the start half of every column of C is the same vector
    let start_part = w_start.dot(&h.column(start_index)) + &head.b;
    let mut pre = w_tok.dot(h);
    pre += &start_part.insert_axis(Axis(1));
    pre.mapv_into(f64::tanh)
}

/// Conditional end scores for a fixed start position.
pub fn conditional_end_scores(
    h: &Array2<f64>,
    start_index: usize,
    head: &ConditionalHead,
) -> Result<ScoreVector> {
    head.check(h.nrows())?;
    if start_index >= h.ncols() {
        return Err(Error::InvalidInput(format!(
            "start index {start_index} outside passage of length {}",
            h.ncols()
        )));
    }
    let hidden = conditional_hidden(h, start_index, head);
    ScoreVector::new(head.w_c.dot(&hidden).to_vec())
}

/// Backpropagates ∂loss/∂(end scores) through the conditional head.
pub fn conditional_end_backward(
    h: &Array2<f64>,
    start_index: usize,
    head: &ConditionalHead,
    grad_end: &[f64],
) -> Result<ConditionalGrads> {
    let d = h.nrows();
    head.check(d)?;
    if start_index >= h.ncols() || grad_end.len() != h.ncols() {
        return Err(Error::InvalidInput(
            "conditional backward shape mismatch".into(),
        ));
    }
    let hidden = conditional_hidden(h, start_index, head);
    let g = ndarray::ArrayView1::from(grad_end);
    // ∂/∂w_c = Σ_k g_k u_k
    let g_wc = hidden.dot(&g);
    // ∂/∂pre = (w_c g_kᵀ) ∘ (1 − u²)
    let mut g_pre = head
        .w_c
        .view()
        .insert_axis(Axis(1))
        .dot(&g.insert_axis(Axis(0)));
    g_pre.zip_mut_with(&hidden, |gp, &u| *gp *= 1.0 - u * u);
    let g_b = g_pre.sum_axis(Axis(1));
    let w_tok = head.w.slice(s![.., ..d]);
    let w_start = head.w.slice(s![.., d..]);
    let mut g_w = Array2::zeros(head.w.dim());
    g_w.slice_mut(s![.., ..d]).assign(&g_pre.dot(&h.t()));
    let h_start = h.column(start_index);
    g_w.slice_mut(s![.., d..]).assign(
        &g_b.view()
            .insert_axis(Axis(1))
            .dot(&h_start.insert_axis(Axis(0))),
    );
    let mut g_h = w_tok.t().dot(&g_pre);
    let g_h_start = w_start.t().dot(&g_b);
    let mut col = g_h.column_mut(start_index);
    col += &g_h_start;
    Ok(ConditionalGrads {
        h: g_h,
        w: g_w,
        b: g_b,
        w_c: g_wc,
    })
}

/// End positions admitted by `policy` after a start at `start`.
pub(crate) fn end_domain(len: usize, start: usize, policy: MaskPolicy) -> std::ops::Range<usize> {
    match policy {
        MaskPolicy::ValidSpans => start..len,
        MaskPolicy::Unmasked => 0..len,
    }
}

/// Cross-entropy of a conditional end distribution restricted to the
/// ends `policy` admits; the gradient is zero outside that domain.
pub(crate) fn conditional_end_xent(
    end_scores: &[f64],
    start: usize,
    end: usize,
    policy: MaskPolicy,
) -> (f64, Vec<f64>) {
    let domain = end_domain(end_scores.len(), start, policy);
    let offset = domain.start;
    let (loss, g) = marginal_xent(&end_scores[domain], &[end - offset]);
    let mut grad = vec![0.0; end_scores.len()];
    grad[offset..offset + g.len()].copy_from_slice(&g);
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLoss {
    /// `grad_start` is ∂/∂(start scores), `grad_end` ∂/∂(conditional end scores).
    pub result: LossResult,
    pub grads: ConditionalGrads,
}

/// Joint-conditional objective `−log P(a_s) − log P(a_e | a_s)` with the end
/// branch teacher-forced on the gold start.
pub fn conditional_loss(
    start: &ScoreVector,
    h: &Array2<f64>,
    head: &ConditionalHead,
    target: SpanTarget,
    policy: MaskPolicy,
) -> Result<ConditionalLoss> {
    if start.len() != h.ncols() {
        return Err(Error::InvalidInput(format!(
            "start scores of length {} for a passage of length {}",
            start.len(),
            h.ncols()
        )));
    }
    target.check_range(start.len())?;
    let end_scores = conditional_end_scores(h, target.start, head)?;
    let (ls, gs) = marginal_xent(start.as_slice(), &[target.start]);
    let (le, ge) = conditional_end_xent(end_scores.as_slice(), target.start, target.end, policy);
    let grads = conditional_end_backward(h, target.start, head, &ge)?;
    Ok(ConditionalLoss {
        result: LossResult {
            loss: ls + le,
            grad_start: Some(gs),
            grad_end: Some(ge),
            grad_joint: None,
        },
        grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Start,
    End,
    Joint,
}

/// Scores of every passage in a context together with their distantly
/// supervised target sets.
#[derive(Debug, Clone, PartialEq)]
pub enum SharedNormTarget {
    /// Start or end scores; targets are token positions.
    Positions {
        passages: Vec<ScoreVector>,
        gt_sets: Vec<Vec<usize>>,
    },
    /// Joint span scores; targets are spans.
    Spans {
        passages: Vec<ScoreMatrix>,
        gt_sets: Vec<Vec<SpanTarget>>,
    },
}

impl SharedNormTarget {
    /// Builds the target for `boundary` from span-level GT sets.
    pub fn from_spans(
        boundary: Boundary,
        start: &[ScoreVector],
        end: &[ScoreVector],
        joint: &[ScoreMatrix],
        gt_spans: &[Vec<SpanTarget>],
    ) -> Self {
        let project = |pick: fn(&SpanTarget) -> usize| -> Vec<Vec<usize>> {
            gt_spans
                .iter()
                .map(|set| {
                    let mut v: Vec<usize> = set.iter().map(pick).collect();
                    v.sort_unstable();
                    v.dedup();
                    v
                })
                .collect()
        };
        match boundary {
            Boundary::Start => SharedNormTarget::Positions {
                passages: start.to_vec(),
                gt_sets: project(|t| t.start),
            },
            Boundary::End => SharedNormTarget::Positions {
                passages: end.to_vec(),
                gt_sets: project(|t| t.end),
            },
            Boundary::Joint => SharedNormTarget::Spans {
                passages: joint.to_vec(),
                gt_sets: gt_spans.to_vec(),
            },
        }
    }
}

/// Per-passage gradients of the shared-normalization loss.
#[derive(Debug, Clone, PartialEq)]
pub enum SharedNormGrads {
    Positions(Vec<Vec<f64>>),
    Spans(Vec<Array2<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedNormLoss {
    pub loss: f64,
    pub grads: SharedNormGrads,
}

/// Shared-normalization objective: one softmax pooled over every position of
/// every passage, numerator marginalized over all GT positions.
pub fn shared_norm_loss(target: &SharedNormTarget) -> Result<SharedNormLoss> {
    match target {
        SharedNormTarget::Positions { passages, gt_sets } => {
            check_pairing(passages.len(), gt_sets.len())?;
            let mut pooled = Vec::new();
            let mut targets = Vec::new();
            let mut offsets = Vec::with_capacity(passages.len());
            for (p, (scores, gt)) in passages.iter().zip(gt_sets).enumerate() {
                let offset = pooled.len();
                offsets.push(offset);
                for &pos in sorted_unique(gt).iter() {
                    if pos >= scores.len() {
                        return Err(Error::InvalidTarget(format!(
                            "GT position {pos} outside passage {p} of length {}",
                            scores.len()
                        )));
                    }
                    targets.push(offset + pos);
                }
                pooled.extend_from_slice(scores.as_slice());
            }
            if targets.is_empty() {
                return Err(Error::NoSupervision("no GT position in any passage".into()));
            }
            let (loss, grad) = marginal_xent(&pooled, &targets);
            let grads = passages
                .iter()
                .zip(offsets)
                .map(|(s, o)| grad[o..o + s.len()].to_vec())
                .collect();
            Ok(SharedNormLoss {
                loss,
                grads: SharedNormGrads::Positions(grads),
            })
        }
        SharedNormTarget::Spans { passages, gt_sets } => {
            check_pairing(passages.len(), gt_sets.len())?;
            let mut pooled = Vec::new();
            let mut targets = Vec::new();
            let mut flats = Vec::with_capacity(passages.len());
            for (p, (scores, gt)) in passages.iter().zip(gt_sets).enumerate() {
                let flat = vectorize(scores)?;
                let offset = pooled.len();
                for span in sorted_unique(gt) {
                    span.check_range(scores.len())?;
                    let pos = flat.position(span.start, span.end).ok_or_else(|| {
                        Error::InvalidTarget(format!(
                            "GT span ({}, {}) is masked in passage {p}",
                            span.start, span.end
                        ))
                    })?;
                    targets.push(offset + pos);
                }
                pooled.extend_from_slice(&flat.values);
                flats.push((offset, flat));
            }
            if targets.is_empty() {
                return Err(Error::NoSupervision("no GT span in any passage".into()));
            }
            check_finite(&pooled)?;
            let (loss, grad) = marginal_xent(&pooled, &targets);
            let grads = flats
                .iter()
                .map(|(o, flat)| flat.scatter(&grad[*o..*o + flat.values.len()], 0.0))
                .collect();
            Ok(SharedNormLoss {
                loss,
                grads: SharedNormGrads::Spans(grads),
            })
        }
    }
}

fn check_pairing(passages: usize, gt_sets: usize) -> Result<()> {
    if passages == 0 {
        return Err(Error::NoSupervision("empty passage set".into()));
    }
    if passages != gt_sets {
        return Err(Error::InvalidInput(format!(
            "{passages} passages but {gt_sets} GT sets"
        )));
    }
    Ok(())
}

fn sorted_unique<T: Ord + Copy>(items: &[T]) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}
