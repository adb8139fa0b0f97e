//! Span-score constructors over start/end boundary representations.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{MaskPolicy, ScoreMatrix};

/// Column-wise start and end representations, both `d × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRepresentations {
    pub start: Array2<f64>,
    pub end: Array2<f64>,
}

impl BoundaryRepresentations {
    pub fn new(start: Array2<f64>, end: Array2<f64>) -> Result<Self> {
        if start.dim() != end.dim() {
            return Err(Error::InvalidInput(format!(
                "start representations {:?} and end representations {:?} differ in shape",
                start.dim(),
                end.dim()
            )));
        }
        if start.iter().chain(end.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite representation".into()));
        }
        Ok(Self { start, end })
    }

    pub fn dim(&self) -> usize {
        self.start.nrows()
    }

    pub fn len(&self) -> usize {
        self.start.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    /// `h_sᵀ h_e`
    #[default]
    Dot,
    /// `wᵀ[h_s ∘ h_e]`
    WeightedDot,
    /// `wᵀ[h_s; h_e]`
    Additive,
    /// `wᵀ[h_s; h_e; h_s ∘ h_e]`
    AdditiveWeightedDot,
    /// BiDAF's `wᵀ[q; p; q ∘ p]`; same algebra as `AdditiveWeightedDot`.
    MultiplicativeAdditive,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 5] = [
        SimilarityKind::Dot,
        SimilarityKind::WeightedDot,
        SimilarityKind::Additive,
        SimilarityKind::AdditiveWeightedDot,
        SimilarityKind::MultiplicativeAdditive,
    ];

    /// Length of the weight vector for model dimension `d`.
    pub fn weight_len(self, d: usize) -> usize {
        match self {
            SimilarityKind::Dot => 0,
            SimilarityKind::WeightedDot => d,
            SimilarityKind::Additive => 2 * d,
            SimilarityKind::AdditiveWeightedDot | SimilarityKind::MultiplicativeAdditive => 3 * d,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Dot => "dot",
            SimilarityKind::WeightedDot => "weighted-dot",
            SimilarityKind::Additive => "additive",
            SimilarityKind::AdditiveWeightedDot => "additive-weighted-dot",
            SimilarityKind::MultiplicativeAdditive => "multiplicative-additive",
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SimilarityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown similarity kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityParams {
    pub kind: SimilarityKind,
    pub w: Array1<f64>,
}

impl SimilarityParams {
    pub fn dot() -> Self {
        Self {
            kind: SimilarityKind::Dot,
            w: Array1::zeros(0),
        }
    }

    pub fn new(kind: SimilarityKind, w: Array1<f64>) -> Self {
        Self { kind, w }
    }

    fn check(&self, d: usize) -> Result<()> {
        let want = self.kind.weight_len(d);
        if self.w.len() != want {
            return Err(Error::InvalidInput(format!(
                "{} similarity with d={d} needs {want} weights, got {}",
                self.kind,
                self.w.len()
            )));
        }
        Ok(())
    }
}

/// Gradients of a scalar loss through [`span_score_values`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrads {
    pub start: Array2<f64>,
    pub end: Array2<f64>,
    pub w: Array1<f64>,
}

/// Raw `L × L` similarity scores `f_sim(h_s[:, i], h_e[:, j])`, no mask.
pub fn span_score_values(
    reps: &BoundaryRepresentations,
    params: &SimilarityParams,
) -> Result<Array2<f64>> {
    let d = reps.dim();
    params.check(d)?;
    let hs = &reps.start;
    let he = &reps.end;
    let w = &params.w;
    let scores = match params.kind {
        SimilarityKind::Dot => hs.t().dot(he),
        SimilarityKind::WeightedDot => {
            let weighted = he * &w.view().insert_axis(Axis(1));
            hs.t().dot(&weighted)
        }
        SimilarityKind::Additive => additive(hs, he, w),
        SimilarityKind::AdditiveWeightedDot | SimilarityKind::MultiplicativeAdditive => {
            let mut s = additive(hs, he, w);
            let w3 = w.slice(ndarray::s![2 * d..]);
            let weighted = he * &w3.insert_axis(Axis(1));
            s += &hs.t().dot(&weighted);
            s
        }
    };
    Ok(scores)
}

fn additive(hs: &Array2<f64>, he: &Array2<f64>, w: &Array1<f64>) -> Array2<f64> {
    let d = hs.nrows();
    let row = w.slice(ndarray::s![..d]).dot(hs);
    let col = w.slice(ndarray::s![d..2 * d]).dot(he);
    Array2::from_shape_fn((hs.ncols(), he.ncols()), |(i, j)| row[i] + col[j])
}

/// Similarity scores wrapped as a masked [`ScoreMatrix`].
pub fn span_scores(
    reps: &BoundaryRepresentations,
    params: &SimilarityParams,
    policy: MaskPolicy,
) -> Result<ScoreMatrix> {
    ScoreMatrix::new(span_score_values(reps, params)?, policy)
}

/// Backpropagates `grad` (∂loss/∂scores, `L × L`) to the representations
/// and the similarity weights.
pub fn span_scores_backward(
    reps: &BoundaryRepresentations,
    params: &SimilarityParams,
    grad: &Array2<f64>,
) -> Result<SimilarityGrads> {
    let d = reps.dim();
    params.check(d)?;
    let hs = &reps.start;
    let he = &reps.end;
    let w = &params.w;
    let mut g_start = Array2::zeros(hs.dim());
    let mut g_end = Array2::zeros(he.dim());
    let mut g_w = Array1::zeros(w.len());

    let bilinear = |weights: Option<ArrayView1<f64>>,
                    g_start: &mut Array2<f64>,
                    g_end: &mut Array2<f64>|
     -> Array1<f64> {
        // S = Hsᵀ diag(w) He  =>  dHs = diag(w) He Gᵀ, dHe = diag(w) Hs G
        let he_gt = he.dot(&grad.t());
        let hs_g = hs.dot(grad);
        match weights {
            None => {
                *g_start += &he_gt;
                *g_end += &hs_g;
                Array1::zeros(0)
            }
            Some(wv) => {
                let col = wv.insert_axis(Axis(1));
                *g_start += &(&he_gt * &col);
                *g_end += &(&hs_g * &col);
                (&hs_g * he).sum_axis(Axis(1))
            }
        }
    };
    let additive_back =
        |g_start: &mut Array2<f64>, g_end: &mut Array2<f64>, g_w: &mut Array1<f64>| {
            let row_sums = grad.sum_axis(Axis(1));
            let col_sums = grad.sum_axis(Axis(0));
            let w1 = w.slice(ndarray::s![..d]).insert_axis(Axis(1));
            let w2 = w.slice(ndarray::s![d..2 * d]).insert_axis(Axis(1));
            *g_start += &(&w1 * &row_sums.view().insert_axis(Axis(0)));
            *g_end += &(&w2 * &col_sums.view().insert_axis(Axis(0)));
            g_w.slice_mut(ndarray::s![..d]).assign(&hs.dot(&row_sums));
            g_w.slice_mut(ndarray::s![d..2 * d])
                .assign(&he.dot(&col_sums));
        };

    match params.kind {
        SimilarityKind::Dot => {
            bilinear(None, &mut g_start, &mut g_end);
        }
        SimilarityKind::WeightedDot => {
            let gw = bilinear(Some(w.view()), &mut g_start, &mut g_end);
            g_w.assign(&gw);
        }
        SimilarityKind::Additive => additive_back(&mut g_start, &mut g_end, &mut g_w),
        SimilarityKind::AdditiveWeightedDot | SimilarityKind::MultiplicativeAdditive => {
            additive_back(&mut g_start, &mut g_end, &mut g_w);
            let gw = bilinear(
                Some(w.slice(ndarray::s![2 * d..])),
                &mut g_start,
                &mut g_end,
            );
            g_w.slice_mut(ndarray::s![2 * d..]).assign(&gw);
        }
    }
    Ok(SimilarityGrads {
        start: g_start,
        end: g_end,
        w: g_w,
    })
}

/// Joint-head representations: `H_s = W·H + b` (b broadcast over columns), `H_e = H`.
pub fn bert_joint_reps(
    h: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<BoundaryRepresentations> {
    let d = h.nrows();
    if w.dim() != (d, d) || b.len() != d {
        return Err(Error::InvalidInput(format!(
            "joint head expects W {d}x{d} and b of length {d}, got W {:?} and b of length {}",
            w.dim(),
            b.len()
        )));
    }
    let start = w.dot(h) + &b.view().insert_axis(Axis(1));
    BoundaryRepresentations::new(start, h.clone())
}

/// BiDAF similarity `wᵀ[q; p; q ∘ p]`.
pub fn bidaf_similarity(q: &[f64], p: &[f64], w: &[f64]) -> Result<f64> {
    let d = q.len();
    if p.len() != d || w.len() != 3 * d {
        return Err(Error::InvalidInput(format!(
            "bidaf similarity needs |q| = |p| = d and |w| = 3d, got {}, {}, {}",
            q.len(),
            p.len(),
            w.len()
        )));
    }
    let mut s = 0.0;
    for k in 0..d {
        s += w[k] * q[k] + w[d + k] * p[k] + w[2 * d + k] * q[k] * p[k];
    }
    Ok(s)
}
