//! Significance protocol for multi-seed comparisons: an Anderson-Darling
//! normality check per sample and a one-tailed paired t-test per pair.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Case-3 (mean and variance estimated) critical value at the 5% level.
pub const AD_CRITICAL_05: f64 = 0.752;
pub const ALPHA: f64 = 0.05;
/// Smallest sample for which a normality verdict is issued.
pub const AD_MIN_N: usize = 5;

/// Per-seed scores of one configuration, in seed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub label: String,
    pub values: Vec<f64>,
}

impl RunSample {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "sample {label} needs at least 2 values"
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "sample {label}: value {v} outside [0, 100]"
            )));
        }
        Ok(Self { label, values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with `n − 1` denominator.
fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Upper tail `P(T > t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Standard normal `ln Φ(z)`.
fn ln_normal_cdf(z: f64) -> f64 {
    (0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normality {
    Normal,
    NonNormal,
    /// Fewer than [`AD_MIN_N`] values.
    Insufficient,
    /// Zero variance; the test is undefined.
    Degenerate,
}

impl Normality {
    pub fn as_str(self) -> &'static str {
        match self {
            Normality::Normal => "normal",
            Normality::NonNormal => "non-normal",
            Normality::Insufficient => "insufficient",
            Normality::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AndersonDarling {
    pub statistic: f64,
    /// `A²·(1 + 0.75/n + 2.25/n²)`
    pub adjusted: f64,
    pub verdict: Normality,
}

/// Anderson-Darling test for normality with estimated mean and variance.
pub fn anderson_darling(values: &[f64]) -> Result<AndersonDarling> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "Anderson-Darling needs at least 2 values".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in sample".into()));
    }
    let sd = sample_sd(values);
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("sample variance is zero".into()));
    }
    let m = mean(values);
    let mut z: Vec<f64> = values.iter().map(|v| (v - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let s: f64 = (0..n)
        .map(|i| (2.0 * i as f64 + 1.0) * (ln_normal_cdf(z[i]) + ln_normal_cdf(-z[n - 1 - i])))
        .sum();
    let statistic = -nf - s / nf;
    let adjusted = statistic * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let verdict = if n < AD_MIN_N {
        Normality::Insufficient
    } else if adjusted < AD_CRITICAL_05 {
        Normality::Normal
    } else {
        Normality::NonNormal
    };
    Ok(AndersonDarling {
        statistic,
        adjusted,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// One-tailed `P(T ≥ t)` under the null.
    pub p: f64,
    pub df: usize,
}

/// One-sample t-test of `mean(d) > 0`.
pub fn one_tailed_t_test(d: &[f64]) -> Result<TTest> {
    let n = d.len();
    if n < 2 {
        return Err(Error::InvalidInput("t-test needs at least 2 pairs".into()));
    }
    let sd = sample_sd(d);
    if !sd.is_finite() {
        return Err(Error::InvalidInput(
            "non-finite value in differences".into(),
        ));
    }
    if sd == 0.0 {
        return Err(Error::DegeneratePairs(
            "differences have zero variance".into(),
        ));
    }
    let t = mean(d) / (sd / (n as f64).sqrt());
    let df = n - 1;
    Ok(TTest {
        t,
        p: student_t_sf(t, df as f64),
        df,
    })
}

/// Paired t-test of `a > b` on seed-aligned samples.
pub fn paired_t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired samples differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    one_tailed_t_test(&d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// `"a>b"`
    pub pair: String,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    /// `"ok"` or the error kind that prevented the test.
    pub outcome: String,
    pub normality_a: Normality,
    pub normality_b: Normality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
}

impl SignificanceReport {
    /// Tab-separated table with a header line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("pair\tt\tp\tsignificant\tnormality_a\tnormality_b\toutcome\n");
        let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        for r in &self.rows {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.pair,
                num(r.t),
                num(r.p),
                r.significant,
                r.normality_a.as_str(),
                r.normality_b.as_str(),
                r.outcome
            )
            .expect("write to string");
        }
        s
    }
}

fn normality(values: &[f64]) -> Result<Normality> {
    match anderson_darling(values) {
        Ok(ad) => Ok(ad.verdict),
        Err(Error::DegenerateSample(_)) => Ok(Normality::Degenerate),
        Err(e) => Err(e),
    }
}

/// Tests each `(a, b)` comparison for `a > b`.
pub fn significance_report(
    samples: &[RunSample],
    comparisons: &[(String, String)],
) -> Result<SignificanceReport> {
    let find = |label: &str| {
        samples
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::InvalidInput(format!("no sample labelled {label:?}")))
    };
    let mut rows = Vec::with_capacity(comparisons.len());
    for (la, lb) in comparisons {
        let a = find(la)?;
        let b = find(lb)?;
        if a.n() != b.n() {
            return Err(Error::InvalidInput(format!(
                "mismatched seed counts: {la} has {}, {lb} has {}",
                a.n(),
                b.n()
            )));
        }
        let (t, p, outcome) = match paired_t_test_one_tailed(&a.values, &b.values) {
            Ok(r) => (Some(r.t), Some(r.p), "ok".to_string()),
            Err(e @ Error::DegeneratePairs(_)) => (None, None, e.kind().to_string()),
            Err(e) => return Err(e),
        };
        rows.push(ComparisonRow {
            pair: format!("{la}>{lb}"),
            t,
            p,
            significant: p.is_some_and(|p| p < ALPHA),
            outcome,
            normality_a: normality(&a.values)?,
            normality_b: normality(&b.values)?,
        });
    }
    Ok(SignificanceReport { alpha: ALPHA, rows })
}

/// Parses `"a>b"` into `("a", "b")`.
pub fn parse_comparison(s: &str) -> Result<(String, String)> {
    match s.split_once('>') {
        Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
            Ok((a.trim().to_string(), b.trim().to_string()))
        }
        _ => Err(Error::Config(format!(
            "comparison {s:?} is not of the form A>B"
        ))),
    }
}
