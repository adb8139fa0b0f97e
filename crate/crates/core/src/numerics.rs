//! Stable softmax primitives, span-matrix vectorization and a central
//! finite-difference gradient oracle.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-softmax scores over a single normalization domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("score vector is empty".into()));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ScoreVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Which (start, end) cells of a span matrix take part in the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPolicy {
    /// Only spans with `end >= start`.
    #[default]
    ValidSpans,
    /// All L² cells.
    Unmasked,
}

impl MaskPolicy {
    #[inline]
    pub fn allows(self, start: usize, end: usize) -> bool {
        match self {
            MaskPolicy::ValidSpans => end >= start,
            MaskPolicy::Unmasked => true,
        }
    }

    pub fn mask(self, len: usize) -> Array2<bool> {
        Array2::from_shape_fn((len, len), |(i, j)| self.allows(i, j))
    }
}

/// Span scores: entry `[i, j]` scores the span starting at `i` and ending
/// (inclusively) at `j`. `mask[i, j] == true` marks a candidate span.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl ScoreMatrix {
    pub fn new(values: Array2<f64>, policy: MaskPolicy) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows != cols {
            return Err(Error::InvalidInput(format!(
                "span score matrix must be square, got {rows}x{cols}"
            )));
        }
        let mask = policy.mask(rows);
        Self::with_mask(values, mask)
    }

    pub fn with_mask(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() || values.nrows() != values.ncols() {
            return Err(Error::InvalidInput(format!(
                "score matrix {:?} and mask {:?} must be square and equal",
                values.dim(),
                mask.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite span score".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Degenerate("every span is masked".into()));
        }
        Ok(Self { values, mask })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    #[inline]
    pub fn is_candidate(&self, start: usize, end: usize) -> bool {
        start < self.len() && end < self.len() && self.mask[[start, end]]
    }
}

/// The flattened unmasked cells of a [`ScoreMatrix`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Vectorized {
    pub values: Vec<f64>,
    pub index: Vec<(usize, usize)>,
    pub len: usize,
}

impl Vectorized {
    /// Flat position of span `(start, end)`, if it is a candidate.
    pub fn position(&self, start: usize, end: usize) -> Option<usize> {
        // index is sorted row-major, so binary search works
        self.index.binary_search(&(start, end)).ok()
    }

    /// Scatters `flat` back into an L×L matrix, `fill` on masked cells.
    pub fn scatter(&self, flat: &[f64], fill: f64) -> Array2<f64> {
        let mut out = Array2::from_elem((self.len, self.len), fill);
        for (&(i, j), &v) in self.index.iter().zip(flat) {
            out[[i, j]] = v;
        }
        out
    }
}

pub fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "non-finite score {} at position {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `ln Σ exp(sᵢ)`, shifted by the maximum.
pub fn logsumexp(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("logsumexp of an empty vector".into()));
    }
    check_finite(scores)?;
    let m = max_of(scores);
    let sum: f64 = scores.iter().map(|&s| (s - m).exp()).sum();
    Ok(m + sum.ln())
}

pub fn log_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    let lse = logsumexp(scores)?;
    Ok(scores.iter().map(|&s| s - lse).collect())
}

pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    check_finite(scores)?;
    let m = max_of(scores);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Row-major flattening of the unmasked cells of `matrix`.
pub fn vectorize(matrix: &ScoreMatrix) -> Result<Vectorized> {
    let len = matrix.len();
    let mut values = Vec::new();
    let mut index = Vec::new();
    for ((i, j), &allowed) in matrix.mask.indexed_iter() {
        if allowed {
            values.push(matrix.values[[i, j]]);
            index.push((i, j));
        }
    }
    if values.is_empty() {
        return Err(Error::Degenerate("every span is masked".into()));
    }
    Ok(Vectorized { values, index, len })
}

/// Central differences `(f(x + eps·eᵢ) − f(x − eps·eᵢ)) / 2eps` per coordinate.
pub fn finite_diff_gradient<F>(mut f: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!(
                "objective not finite at coordinate {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_softmax_uniform_pair() {
        let out = log_softmax(&[0.0, 0.0]).unwrap();
        assert!((out[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!((out[1] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_large_gap_is_stable() {
        let out = log_softmax(&[1000.0, 0.0]).unwrap();
        assert!(out[0].abs() < 1e-12);
        assert!((out[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_matches_naive_sum() {
        // naive exp/sum oracle; moderate logits so the naive route is exact enough
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
            let denom: f64 = v.iter().map(|x| x.exp()).sum();
            let naive: Vec<f64> = v.iter().map(|x| (x.exp() / denom).ln()).collect();
            let got = log_softmax(&v).unwrap();
            for (g, n) in got.iter().zip(&naive) {
                assert!((g - n).abs() < 1e-12, "{g} vs {n}");
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            log_softmax(&[0.0, f64::NAN]),
            Err(Error::InvalidInput(_))
        ));
        assert!(ScoreVector::new(vec![f64::INFINITY]).is_err());
        assert!(matches!(logsumexp(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn logsumexp_identities() {
        assert_eq!(logsumexp(&[0.0]).unwrap(), 0.0);
        let a = -3.25;
        assert!((logsumexp(&[a, a]).unwrap() - (a + 2f64.ln())).abs() < 1e-15);
        let big = logsumexp(&[700.0, 700.0]).unwrap();
        assert!((big - (700.0 + 2f64.ln())).abs() < 1e-12);
        // shifted naive sum
        let shifted = 700.0 + ((0.0f64).exp() + (0.0f64).exp()).ln();
        assert!((big - shifted).abs() < 1e-12);
    }

    #[test]
    fn vectorize_masked_two_by_two() {
        let m = ScoreMatrix::new(array![[1.0, 2.0], [3.0, 4.0]], MaskPolicy::ValidSpans).unwrap();
        let v = vectorize(&m).unwrap();
        assert_eq!(v.values, vec![1.0, 2.0, 4.0]);
        assert_eq!(v.index, vec![(0, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn vectorize_single_cell() {
        let m = ScoreMatrix::new(array![[7.0]], MaskPolicy::ValidSpans).unwrap();
        let v = vectorize(&m).unwrap();
        assert_eq!(v.values, vec![7.0]);
        assert_eq!(v.index, vec![(0, 0)]);
    }

    #[test]
    fn vectorize_unmasked_row_major() {
        let values = Array2::from_shape_fn((3, 3), |(i, j)| (10 * i + j) as f64);
        let m = ScoreMatrix::new(values, MaskPolicy::Unmasked).unwrap();
        let v = vectorize(&m).unwrap();
        let mut expected = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                expected.push(((i, j), (10 * i + j) as f64));
            }
        }
        assert_eq!(v.index.len(), 9);
        for (k, (cell, val)) in expected.into_iter().enumerate() {
            assert_eq!(v.index[k], cell);
            assert_eq!(v.values[k], val);
            assert_eq!(v.position(cell.0, cell.1), Some(k));
        }
    }

    #[test]
    fn all_masked_is_degenerate() {
        let mask = Array2::from_elem((2, 2), false);
        let err = ScoreMatrix::with_mask(Array2::zeros((2, 2)), mask).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn finite_diff_square_and_constant() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_reports_non_finite() {
        let err = finite_diff_gradient(|x| if x[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-3)
            .unwrap_err();
        assert!(matches!(err, Error::OracleFailure(_)));
        assert!(finite_diff_gradient(|x| x[0], &[0.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn log_softmax_normalizes(v in prop::collection::vec(-500.0f64..500.0, 1..16)) {
            let total: f64 = log_softmax(&v).unwrap().iter().map(|x| x.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn vectorize_scatter_roundtrip(n in 1usize..7, seed in 0u64..1000, unmasked in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = Array2::from_shape_fn((n, n), |_| rng.random_range(-3.0..3.0));
            let policy = if unmasked { MaskPolicy::Unmasked } else { MaskPolicy::ValidSpans };
            let m = ScoreMatrix::new(values.clone(), policy).unwrap();
            let v = vectorize(&m).unwrap();
            let back = v.scatter(&v.values, f64::NAN);
            for ((i, j), &allowed) in m.mask().indexed_iter() {
                if allowed {
                    prop_assert_eq!(back[[i, j]], values[[i, j]]);
                } else {
                    prop_assert!(back[[i, j]].is_nan());
                }
            }
        }
    }
}
