//! Per-replication error metrics, seven-number summaries and table formatting.

use serde::{Deserialize, Serialize};

use crate::error::{MeloError, Result};
use crate::linalg::kahan_sum;

/// Squared, absolute and absolute-percentage errors per component, and their
/// means over components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub se: Vec<f64>,
    pub ae: Vec<f64>,
    pub ape: Vec<f64>,
    pub mse: f64,
    pub mae: f64,
    pub mape: f64,
}

impl ErrorMetrics {
    /// False when any component estimate was non-finite.
    pub fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.mae.is_finite()
    }
}

/// Errors of `estimate` against `truth`; non-finite estimates give infinite errors.
pub fn error_metrics(estimate: &[f64], truth: &[f64]) -> Result<ErrorMetrics> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(MeloError::DimensionMismatch(format!(
            "estimate has {} components, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    if truth.iter().any(|t| !t.is_finite()) {
        return Err(MeloError::InvalidParameter("truth must be finite".into()));
    }
    let k = truth.len();
    let mut se = Vec::with_capacity(k);
    let mut ae = Vec::with_capacity(k);
    let mut ape = Vec::with_capacity(k);
    for (&e, &t) in estimate.iter().zip(truth) {
        let d = if e.is_finite() { (e - t).abs() } else { f64::INFINITY };
        se.push(d * d);
        ae.push(d);
        ape.push(if t != 0.0 { d / t.abs() } else { f64::NAN });
    }
    let mean = |v: &[f64]| kahan_sum(v.iter().copied()) / k as f64;
    Ok(ErrorMetrics { mse: mean(&se), mae: mean(&ae), mape: mean(&ape), se, ae, ape })
}

/// min, quartiles (type 7), mean, max and range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    pub range: f64,
    pub n: usize,
    pub discards: usize,
}

impl Summary {
    pub fn values(&self) -> [f64; 7] {
        [self.min, self.q1, self.median, self.mean, self.q3, self.max, self.range]
    }

    /// Ordering and range identities every emitted row must satisfy.
    pub fn is_consistent(&self) -> bool {
        let tol = 1e-12 * self.max.abs().max(self.min.abs()).max(1.0);
        self.min <= self.q1
            && self.q1 <= self.median
            && self.median <= self.q3
            && self.q3 <= self.max
            && self.mean >= self.min - tol
            && self.mean <= self.max + tol
            && self.range == self.max - self.min
    }
}

/// Linear-interpolation quantile on sorted data: h = (n − 1)p.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Seven-number summary; non-finite values are dropped (and counted) when
/// `discard_nonfinite`, otherwise they propagate.
pub fn summarize(values: &[f64], discard_nonfinite: bool) -> Result<Summary> {
    let mut kept: Vec<f64> = if discard_nonfinite {
        values.iter().copied().filter(|v| v.is_finite()).collect()
    } else {
        values.to_vec()
    };
    let discards = values.len() - kept.len();
    if kept.is_empty() {
        return Err(MeloError::EmptySummary);
    }
    if kept.iter().any(|v| v.is_nan()) {
        return Err(MeloError::InvalidParameter("cannot summarize NaN values without discarding".into()));
    }
    kept.sort_by(|a, b| a.partial_cmp(b).expect("no NaN after filtering"));
    let n = kept.len();
    let (min, max) = (kept[0], kept[n - 1]);
    let mean = (kahan_sum(kept.iter().copied()) / n as f64).clamp(min, max);
    Ok(Summary {
        min,
        q1: quantile_sorted(&kept, 0.25),
        median: quantile_sorted(&kept, 0.5),
        mean,
        q3: quantile_sorted(&kept, 0.75),
        max,
        range: max - min,
        n,
        discards,
    })
}

/// Fixed 4 decimals, or `d.dddd E±XX` when |x| ≥ 1e6 or 0 < |x| < 1e-6.
pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    let a = x.abs();
    if a >= 1e6 || (a > 0.0 && a < 1e-6) {
        let s = format!("{x:.4E}");
        let (mant, exp) = s.split_once('E').expect("exponent present");
        let e: i32 = exp.parse().expect("integer exponent");
        let sign = if e < 0 { '-' } else { '+' };
        format!("{mant}E{sign}{:02}", e.abs())
    } else {
        let s = format!("{x:.4}");
        if s == "-0.0000" { "0.0000".into() } else { s }
    }
}

/// Inverse of [`format_value`].
pub fn parse_value(s: &str) -> Option<f64> {
    match s.trim() {
        "NA" => Some(f64::NAN),
        "Inf" => Some(f64::INFINITY),
        "-Inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}
