//! Scored samples, score normalization, seeded splits and level-balanced sampling.
//!
//! All randomness comes from ChaCha8 seeded through `SeedableRng::seed_from_u64`,
//! so a `(seed, input)` pair always yields the same permutation regardless of
//! platform.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored item. `features` stands in for the image content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub id: String,
    pub features: Vec<f64>,
    pub mos: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// A non-empty collection of samples sharing one feature dimension.
///
/// `normalized` records whether `mos` values are already on `[0, 1]`; loaders
/// produce raw datasets and [`normalize_mos`] flips the flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    dim: usize,
    provenance: Provenance,
    normalized: bool,
}

impl Dataset {
    pub fn new(samples: Vec<ImageSample>, provenance: Provenance, normalized: bool) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let dim = first.features.len();
        if dim == 0 {
            return Err(Error::InvalidArgument(format!("sample {:?} has no features", first.id)));
        }
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: s.features.len() });
            }
            if !s.mos.is_finite() || s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("sample"));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        if normalized && samples.iter().any(|s| !(0.0..=1.0).contains(&s.mos)) {
            return Err(Error::NotNormalized);
        }
        Ok(Self { samples, dim, provenance, normalized })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn mos(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mos).collect()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
            provenance: self.provenance,
            normalized: self.normalized,
        }
    }
}

/// Three aesthetic bands. Boundaries are lower-inclusive: 0.4 is fair, 0.7 is good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AestheticLevel {
    Bad,
    Fair,
    Good,
}

impl AestheticLevel {
    pub const ALL: [AestheticLevel; 3] = [AestheticLevel::Bad, AestheticLevel::Fair, AestheticLevel::Good];

    pub fn of(mos: f64) -> Self {
        if mos < 0.4 {
            AestheticLevel::Bad
        } else if mos < 0.7 {
            AestheticLevel::Fair
        } else {
            AestheticLevel::Good
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AestheticLevel::Bad => "bad",
            AestheticLevel::Fair => "fair",
            AestheticLevel::Good => "good",
        }
    }
}

/// Min-max normalizes raw scores onto `[0, 1]` using explicit bounds.
pub fn normalize_mos(dataset: &Dataset, raw_min: f64, raw_max: f64) -> Result<Dataset> {
    if !(raw_min.is_finite() && raw_max.is_finite()) {
        return Err(Error::NonFinite("normalization bounds"));
    }
    if raw_max <= raw_min {
        return Err(Error::InvalidArgument(format!(
            "raw_max ({raw_max}) must exceed raw_min ({raw_min})"
        )));
    }
    let span = raw_max - raw_min;
    let mut samples = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        if s.mos < raw_min || s.mos > raw_max {
            return Err(Error::OutOfRange { id: s.id.clone(), value: s.mos, min: raw_min, max: raw_max });
        }
        let mos = ((s.mos - raw_min) / span).clamp(0.0, 1.0);
        samples.push(ImageSample { mos, ..s.clone() });
    }
    Ok(Dataset { samples, dim: dataset.dim, provenance: dataset.provenance, normalized: true })
}

/// Fisher-Yates permutation of `0..n` driven by ChaCha8 seeded from `seed`.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Splits into `(train, test)`: the first `round(ratio * M)` permuted samples train.
pub fn split_dataset(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside (0, 1)")));
    }
    let total = dataset.len();
    let n_train = libm::round(ratio * total as f64) as usize;
    if n_train == 0 {
        return Err(Error::EmptySplit { total, ratio, side: "train" });
    }
    if n_train == total {
        return Err(Error::EmptySplit { total, ratio, side: "test" });
    }
    let perm = seeded_permutation(total, seed);
    Ok((dataset.subset(&perm[..n_train]), dataset.subset(&perm[n_train..])))
}

/// Draws exactly `per_level` samples from each aesthetic level (bad, fair, good order).
pub fn balanced_sample(dataset: &Dataset, per_level: usize, seed: u64) -> Result<Dataset> {
    if per_level == 0 {
        return Err(Error::InvalidArgument("per_level must be positive".into()));
    }
    let mut pools: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, s) in dataset.samples.iter().enumerate() {
        pools[AestheticLevel::of(s.mos) as usize].push(i);
    }
    for level in AestheticLevel::ALL {
        let available = pools[level as usize].len();
        if available < per_level {
            return Err(Error::InsufficientLevel { level: level.name(), available, requested: per_level });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(3 * per_level);
    for pool in pools.iter_mut() {
        // partial Fisher-Yates: the first per_level slots end up a uniform draw
        let n = pool.len();
        for i in 0..per_level {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        chosen.extend_from_slice(&pool[..per_level]);
    }
    Ok(dataset.subset(&chosen))
}

/// The fixed smooth score map behind [`synth_generate`]:
/// `g(x) = logistic(bias + sum_i w_i x_i + sum_i q_i (x_i^2 - 1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    pub bias: f64,
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
}

/// Offset of the logistic's linear form. Skews scores toward the upper
/// end so that rank and calibration objectives disagree measurably.
pub const SYNTH_BIAS: f64 = 2.0;

impl SynthModel {
    /// Coefficients are drawn from stream 0 of the seeded generator.
    pub fn from_seed(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.5 / libm::sqrt(d.max(1) as f64);
        let linear = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let quadratic = (0..d).map(|_| 0.15 * scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { bias: SYNTH_BIAS, linear, quadratic }
    }

    pub fn eval(&self, features: &[f64]) -> f64 {
        let mut z = self.bias;
        for ((x, w), q) in features.iter().zip(&self.linear).zip(&self.quadratic) {
            z += w * x + q * (x * x - 1.0);
        }
        1.0 / (1.0 + libm::exp(-z))
    }
}

/// Generates `n` samples with standard-normal features and
/// `mos = clamp(g(x) + noise * eta, 0, 1)`, `eta ~ N(0, 1)`.
pub fn synth_generate(n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise {noise} must be finite and non-negative")));
    }
    let model = SynthModel::from_seed(d, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let samples = (0..n)
        .map(|i| {
            let features: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let eta: f64 = rng.sample(StandardNormal);
            let mos = (model.eval(&features) + noise * eta).clamp(0.0, 1.0);
            ImageSample { id: format!("s{i:05}"), features, mos }
        })
        .collect();
    Dataset::new(samples, Provenance::Synthetic, true)
}
