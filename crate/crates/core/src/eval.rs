//! Peak picking, tolerance-window matching and P/R/F1 aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotations::OnsetAnnotations;
use crate::error::{Error, Result};
use crate::features::FRAME_RATE;
use crate::model::ActivationFunction;

pub const DEFAULT_TOLERANCE: f64 = 0.025;

/// Slack for comparisons of times that are nominally equal.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakPickParams {
    pub threshold: f64,
    /// Half-width in frames of the local-maximum window.
    pub w_max: usize,
    /// Half-width in frames of the moving-average window.
    pub w_avg: usize,
    pub delta: f64,
    /// Minimum spacing between accepted onsets, in seconds.
    pub min_gap: f64,
}

impl Default for PeakPickParams {
    fn default() -> Self {
        PeakPickParams {
            threshold: 0.5,
            w_max: 1,
            w_avg: 2,
            delta: 0.0,
            min_gap: 0.030,
        }
    }
}

impl PeakPickParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.min_gap + TIME_EPS >= 1.0 / FRAME_RATE) || !self.delta.is_finite() {
            return Err(Error::Config("minimum gap must be at least one frame".into()));
        }
        Ok(())
    }
}

fn window(t: usize, half: usize, len: usize) -> std::ops::Range<usize> {
    t.saturating_sub(half)..(t + half + 1).min(len)
}

/// Onset times from an activation function, scanning left to right.
pub fn peak_pick(activation: &ActivationFunction, params: &PeakPickParams) -> OnsetAnnotations {
    let a = activation.values();
    let n = a.len();
    let mut accepted: Vec<usize> = Vec::new();
    for t in 0..n {
        let v = a[t];
        if v < params.threshold {
            continue;
        }
        if a[window(t, params.w_max, n)].iter().any(|&u| u > v) {
            continue;
        }
        // frames outside the activation count as zeros
        let mean = a[window(t, params.w_avg, n)].iter().sum::<f64>() / (2 * params.w_avg + 1) as f64;
        if v < mean + params.delta {
            continue;
        }
        if let Some(&last) = accepted.last() {
            if ((t - last) as f64 / FRAME_RATE) < params.min_gap - TIME_EPS {
                continue;
            }
        }
        accepted.push(t);
    }
    let times = accepted.iter().map(|&t| t as f64 / FRAME_RATE).collect();
    OnsetAnnotations::from_times(times).expect("frame times are valid and at least 10 ms apart")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Counts { tp, fp, fn_ }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub counts: Counts,
    /// `(estimate index, reference index)` pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// One-to-one matching within `± tolerance`. References are visited in
/// ascending order and each takes the earliest still-unmatched estimate
/// inside its window, which yields a maximum-cardinality matching because
/// all windows have equal width.
pub fn match_onsets(estimates: &OnsetAnnotations, reference: &OnsetAnnotations, tolerance: f64) -> Matching {
    let e = estimates.times();
    let r = reference.times();
    let mut pairs = Vec::new();
    let mut next = 0;
    for (ri, &rt) in r.iter().enumerate() {
        while next < e.len() && e[next] < rt - tolerance - TIME_EPS {
            next += 1;
        }
        if next < e.len() && e[next] <= rt + tolerance + TIME_EPS {
            pairs.push((next, ri));
            next += 1;
        }
    }
    let tp = pairs.len();
    Matching {
        counts: Counts::new(tp, e.len() - tp, r.len() - tp),
        pairs,
    }
}

/// Precision, recall and F1; empty denominators count as perfect.
pub fn compute_prf(c: Counts) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FileScore {
    pub counts: Counts,
    pub f1: f64,
}

/// Scores over a file set. `f1` is the mean of per-file F1 (the headline
/// number); `precision`, `recall` and `summed_f1` come from summed counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub summed_f1: f64,
    pub f1: f64,
    pub per_file: BTreeMap<String, FileScore>,
}

pub fn aggregate(per_file: &[(String, Counts)]) -> Result<EvalResult> {
    if per_file.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let mut total = Counts::default();
    let mut map = BTreeMap::new();
    for (id, c) in per_file {
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
        let score = FileScore {
            counts: *c,
            f1: compute_prf(*c).2,
        };
        if map.insert(id.clone(), score).is_some() {
            return Err(Error::Config(format!("file {id} listed twice")));
        }
    }
    let mean_f1 = map.values().map(|s| s.f1).sum::<f64>() / map.len() as f64;
    let (precision, recall, summed_f1) = compute_prf(total);
    Ok(EvalResult {
        counts: total,
        precision,
        recall,
        summed_f1,
        f1: mean_f1,
        per_file: map,
    })
}

/// Signed F1 difference in percentage points.
pub fn delta_pp_f1(adapted_f1: f64, baseline_f1: f64) -> f64 {
    (adapted_f1 - baseline_f1) * 100.0
}

/// Headline F1 difference of two results over the same files.
pub fn delta_pp(adapted: &EvalResult, baseline: &EvalResult) -> Result<f64> {
    if !adapted.per_file.keys().eq(baseline.per_file.keys()) {
        return Err(Error::Config("results cover different file sets".into()));
    }
    Ok(delta_pp_f1(adapted.f1, baseline.f1))
}
