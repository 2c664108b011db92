//! Correlation and distribution metrics for score predictions.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::policy::ScorePolicy;

/// Pearson linear correlation.
pub fn plcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch { expected: gt.len(), got: pred.len() });
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples"));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    let mx = pred.iter().sum::<f64>() / n as f64;
    let my = gt.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pred.iter().zip(gt) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("prediction vector has zero variance"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("ground-truth vector has zero variance"));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks: tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank-order correlation with average ranks for ties.
pub fn srcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch { expected: gt.len(), got: pred.len() });
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples"));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    plcc(&average_ranks(pred), &average_ranks(gt)).map_err(|e| match e {
        Error::UndefinedCorrelation(_) => Error::UndefinedCorrelation("all values tied"),
        other => other,
    })
}

pub fn mean_entropy(policy: &ScorePolicy, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut acc = 0.0;
    for s in dataset.samples() {
        acc += policy.entropy(&s.features)?;
    }
    Ok(acc / dataset.len() as f64)
}

/// Equal-width histogram on `[0, 1]`; the last bin includes 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn histogram(scores: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(alloc::format!("score {s} outside [0, 1]")));
        }
        let k = (libm::floor(s * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let bin_edges = (0..=bins).map(|k| k as f64 / bins as f64).collect();
    Ok(Histogram { bin_edges, counts })
}

/// Evaluation summary. A correlation that is undefined (for instance a
/// constant prediction vector) is `None`, with the reason in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    pub mean_entropy: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn from_predictions(pred: &[f64], gt: &[f64], mean_entropy: f64) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::DimensionMismatch { expected: gt.len(), got: pred.len() });
        }
        let mut undefined = Vec::new();
        let mut keep = |r: Result<f64>, name: &str| -> Result<Option<f64>> {
            match r {
                Ok(v) => Ok(Some(v)),
                Err(e @ Error::UndefinedCorrelation(_)) => {
                    undefined.push(alloc::format!("{name}: {e}"));
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        let p = keep(plcc(pred, gt), "plcc")?;
        let s = keep(srcc(pred, gt), "srcc")?;
        Ok(Self { plcc: p, srcc: s, mean_entropy, n: pred.len(), undefined })
    }
}
