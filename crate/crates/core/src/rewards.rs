//! Rewards for scored outputs.
//!
//! A predicted score `o` for image `i` can earn
//!
//! * a rank reward: agreement between the Gaussian win probability of `o`
//!   against every other image's group mean and the ground-truth preference,
//!   averaged over the batch;
//! * an absolute reward: a Gaussian kernel of `|o - mos_i|` plus a floor;
//! * a binary reward: `1` if `|o - mos_i|` is under a threshold.
//!
//! [`combined_reward`] sums whichever components a [`RewardMode`] selects.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean and population variance of one image's K sampled scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mu: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Width of the absolute-error kernel.
    pub sigma: f64,
    /// Floor added under the square root of the pairwise denominator.
    pub gamma: f64,
    /// Additive floor on the absolute reward.
    pub eps_floor: f64,
    /// Strict threshold of the binary reward.
    pub binary_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { sigma: 0.1, gamma: 1e-6, eps_floor: 1e-3, binary_threshold: 0.05 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("eps_floor", self.eps_floor),
            ("binary_threshold", self.binary_threshold),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(alloc::format!("reward.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Reward combinations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Binary,
    Error,
    Rank,
    BinaryRank,
    ErrorRank,
}

impl RewardMode {
    pub const ALL: [RewardMode; 5] =
        [RewardMode::Binary, RewardMode::Error, RewardMode::Rank, RewardMode::BinaryRank, RewardMode::ErrorRank];

    pub fn uses_rank(self) -> bool {
        matches!(self, RewardMode::Rank | RewardMode::BinaryRank | RewardMode::ErrorRank)
    }

    pub fn uses_abs(self) -> bool {
        matches!(self, RewardMode::Error | RewardMode::ErrorRank)
    }

    pub fn uses_binary(self) -> bool {
        matches!(self, RewardMode::Binary | RewardMode::BinaryRank)
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Binary => "binary",
            RewardMode::Error => "error",
            RewardMode::Rank => "rank",
            RewardMode::BinaryRank => "binary_rank",
            RewardMode::ErrorRank => "error_rank",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl core::fmt::Display for RewardMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Raw reward components for one output; `None` when not computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub rank: Option<f64>,
    pub abs: Option<f64>,
    pub binary: Option<f64>,
}

/// Per-output rewards. Components the mode did not select are kept for
/// logging when they were computed, and `None` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub rank: Option<f64>,
    pub abs: Option<f64>,
    pub binary: Option<f64>,
    pub combined: f64,
}

fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z * core::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal CDF, computed as `erfc(-z / sqrt 2) / 2`.
///
/// `libm::erfc` is accurate to a few ulps, well inside the 1e-7 budget, and
/// keeps relative precision in the lower tail.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite("std_normal_cdf argument"));
    }
    Ok(phi(z))
}

/// Probability that output `o_ik` of image `i` beats image `j`.
pub fn pairwise_prob(o_ik: f64, stats_i: GroupStats, stats_j: GroupStats, gamma: f64) -> Result<f64> {
    if !(o_ik.is_finite() && stats_i.mu.is_finite() && stats_j.mu.is_finite()) {
        return Err(Error::NonFinite("pairwise_prob inputs"));
    }
    if !(stats_i.var.is_finite() && stats_j.var.is_finite() && gamma.is_finite()) {
        return Err(Error::NonFinite("pairwise_prob variances"));
    }
    if gamma <= 0.0 {
        return Err(Error::InvalidArgument(alloc::format!("gamma must be positive, got {gamma}")));
    }
    let denom = libm::sqrt(stats_i.var + stats_j.var + gamma);
    Ok(phi((o_ik - stats_j.mu) / denom))
}

/// Ground-truth preference: `1` iff `s_i >= s_j`.
pub fn preference_label(s_i: f64, s_j: f64) -> u8 {
    u8::from(s_i >= s_j)
}

/// Rank reward of output `o_ik` of image `i` against the rest of the batch.
pub fn rank_reward(o_ik: f64, i: usize, batch_stats: &[GroupStats], batch_mos: &[f64], gamma: f64) -> Result<f64> {
    let n = batch_stats.len();
    if n < 2 {
        return Err(Error::RankBatchTooSmall(n));
    }
    if batch_mos.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: batch_mos.len() });
    }
    if i >= n {
        return Err(Error::InvalidArgument(alloc::format!("image index {i} outside batch of {n}")));
    }
    let mut acc = 0.0;
    for j in (0..n).filter(|&j| j != i) {
        let p = pairwise_prob(o_ik, batch_stats[i], batch_stats[j], gamma)?;
        acc += if preference_label(batch_mos[i], batch_mos[j]) == 1 { libm::sqrt(p) } else { libm::sqrt(1.0 - p) };
    }
    Ok(acc / (n - 1) as f64)
}

/// Gaussian kernel of the absolute error plus `eps_floor`.
pub fn abs_reward(o_ik: f64, s_i: f64, sigma: f64, eps_floor: f64) -> f64 {
    let z = libm::fabs(o_ik - s_i) / sigma;
    libm::exp(-0.5 * z * z) + eps_floor
}

pub fn binary_reward(o_ik: f64, s_i: f64, threshold: f64) -> f64 {
    if libm::fabs(o_ik - s_i) < threshold {
        1.0
    } else {
        0.0
    }
}

/// Sums the components selected by `mode`.
pub fn combined_reward(mode: RewardMode, components: RewardComponents) -> Result<RewardBreakdown> {
    let mut combined = 0.0;
    if mode.uses_rank() {
        combined += components.rank.ok_or(Error::MissingComponent("rank"))?;
    }
    if mode.uses_abs() {
        combined += components.abs.ok_or(Error::MissingComponent("abs"))?;
    }
    if mode.uses_binary() {
        combined += components.binary.ok_or(Error::MissingComponent("binary"))?;
    }
    Ok(RewardBreakdown { rank: components.rank, abs: components.abs, binary: components.binary, combined })
}

/// Mean and population variance; a single score has variance 0.
pub fn group_stats(scores: &[f64]) -> Result<GroupStats> {
    if scores.is_empty() {
        return Err(Error::Empty("group scores"));
    }
    let k = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / k;
    let var = scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / k;
    Ok(GroupStats { mu, var })
}

/// Rewards for every output of every image in a batch.
///
/// Group statistics for the whole batch are computed first; per-output
/// rewards are evaluated only once that snapshot is complete. The rank
/// component is computed whenever the batch has at least two images, even
/// if `mode` does not use it.
pub fn batch_rewards(
    mode: RewardMode,
    scores: &[Vec<f64>],
    mos: &[f64],
    cfg: &RewardConfig,
) -> Result<(Vec<GroupStats>, Vec<Vec<RewardBreakdown>>)> {
    if scores.len() != mos.len() {
        return Err(Error::DimensionMismatch { expected: mos.len(), got: scores.len() });
    }
    let n = scores.len();
    if mode.uses_rank() && n < 2 {
        return Err(Error::RankBatchTooSmall(n));
    }
    let stats = scores.iter().map(|g| group_stats(g)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(n);
    for (i, group) in scores.iter().enumerate() {
        let mut row = Vec::with_capacity(group.len());
        for &o in group {
            let rank = if n >= 2 { Some(rank_reward(o, i, &stats, mos, cfg.gamma)?) } else { None };
            let components = RewardComponents {
                rank,
                abs: Some(abs_reward(o, mos[i], cfg.sigma, cfg.eps_floor)),
                binary: Some(binary_reward(o, mos[i], cfg.binary_threshold)),
            };
            row.push(combined_reward(mode, components)?);
        }
        out.push(row);
    }
    Ok((stats, out))
}
