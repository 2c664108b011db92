//! Group-relative policy optimization with the relative + absolute reward.
//!
//! Each step refreshes the old-policy snapshot, samples `K` scores per image,
//! computes batch rewards, standardizes them within each group and ascends
//!
//! ```text
//! J = mean_{i,k} [ min(r A, clip(r, 1 - eps_low, 1 + eps_high) A) - beta * k3 ]
//! r  = pi(o) / pi_old(o)
//! k3 = u - ln u - 1,  u = pi_ref(o) / pi(o)
//! ```
//!
//! Outputs are single score tokens, so the per-token average has one term.

use alloc::vec;
use alloc::vec::Vec;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::dataset::{seeded_permutation, Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::policy::{backward, snapshot, Params, PolicySnapshot, SampledOutput, ScorePolicy, SnapshotRole};
use crate::rewards::{batch_rewards, GroupStats, RewardBreakdown, RewardConfig, RewardMode};

/// Population standard deviations below this zero the whole group.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RapoConfig {
    /// Group size: sampled outputs per image.
    pub k: usize,
    /// KL penalty coefficient.
    pub beta: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub lr: f64,
    /// Heavy-ball momentum; 0 is plain stochastic gradient ascent.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs_per_rollout: usize,
    pub reward_mode: RewardMode,
    pub reward: RewardConfig,
    pub seed: u64,
}

impl Default for RapoConfig {
    fn default() -> Self {
        Self {
            k: 4,
            beta: 0.01,
            eps_low: 0.2,
            eps_high: 0.28,
            lr: 1e-3,
            momentum: 0.0,
            batch_size: 32,
            epochs_per_rollout: 1,
            reward_mode: RewardMode::ErrorRank,
            reward: RewardConfig::default(),
            seed: 0,
        }
    }
}

impl RapoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k == 0 {
            return bad("rapo.k must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("rapo.batch_size must be positive".into());
        }
        if self.epochs_per_rollout == 0 {
            return bad("rapo.epochs_per_rollout must be positive".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(alloc::format!("rapo.beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.eps_low > 0.0 && self.eps_low < 1.0) {
            return bad(alloc::format!("rapo.eps_low must lie in (0, 1), got {}", self.eps_low));
        }
        if !(self.eps_high > 0.0 && self.eps_high.is_finite()) {
            return bad(alloc::format!("rapo.eps_high must be positive, got {}", self.eps_high));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(alloc::format!("rapo.lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(alloc::format!("rapo.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.reward_mode.uses_rank() && self.batch_size < 2 {
            return Err(Error::RankBatchTooSmall(self.batch_size));
        }
        self.reward.validate()
    }
}

/// `(r_k - mean) / std` with the population std; a flat group gets all zeros.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Empty("group rewards"));
    }
    let k = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / k;
    let std = libm::sqrt(rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k);
    if !(std >= ADVANTAGE_STD_FLOOR) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn prob_ratio(logprob_current: f64, logprob_old: f64) -> Result<f64> {
    if !(logprob_current.is_finite() && logprob_old.is_finite()) {
        return Err(Error::NonFinite("log-probabilities"));
    }
    Ok(libm::exp(logprob_current - logprob_old))
}

/// k3 estimator `u - ln u - 1` with `u = pi_ref / pi`, evaluated as `expm1(d) - d`.
pub fn kl_approx(logprob_ref: f64, logprob_current: f64) -> Result<f64> {
    if !(logprob_ref.is_finite() && logprob_current.is_finite()) {
        return Err(Error::NonFinite("log-probabilities"));
    }
    let d = logprob_ref - logprob_current;
    Ok((libm::expm1(d) - d).max(0.0))
}

pub fn surrogate_term(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * advantage).min(clipped * advantage)
}

/// The K outputs of one image with their rewards and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub sample_id: String,
    pub features: Vec<f64>,
    pub mos: f64,
    pub outputs: Vec<SampledOutput>,
    pub stats: GroupStats,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

/// Per-step diagnostics of the surrogate, measured before the update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Objective and its gradient for fixed rollouts, evaluated at `policy`.
///
/// `logprob_old` and `logprob_ref` are read from the stored outputs, so the
/// result depends on `policy` only through `log pi(o)`.
pub fn surrogate_objective_grad(
    policy: &ScorePolicy,
    groups: &[RolloutGroup],
    cfg: &RapoConfig,
) -> Result<(SurrogateStats, Params)> {
    let total: usize = groups.iter().map(|g| g.outputs.len()).sum();
    if total == 0 {
        return Err(Error::Empty("rollout groups"));
    }
    let inv = 1.0 / total as f64;
    let mut grad = Params::zeros_like(policy.params());
    let mut stats = SurrogateStats::default();
    let mut clipped = 0usize;
    for g in groups {
        if g.advantages.len() != g.outputs.len() {
            return Err(Error::DimensionMismatch { expected: g.outputs.len(), got: g.advantages.len() });
        }
        let f = policy.forward(&g.features)?;
        let mut dlogits = vec![0.0; policy.bins()];
        for (o, &adv) in g.outputs.iter().zip(&g.advantages) {
            let lp = f.logits[o.bin] - f.log_norm;
            let ratio = prob_ratio(lp, o.logprob_old)?;
            let kl = kl_approx(o.logprob_ref, lp)?;
            let surr = surrogate_term(ratio, adv, cfg.eps_low, cfg.eps_high);
            stats.objective += (surr - cfg.beta * kl) * inv;
            stats.kl += kl * inv;
            // d ratio = ratio * d lp ; d k3 = (1 - u) * d lp
            let unclipped = ratio * adv <= ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * adv;
            let mut coef = cfg.beta * libm::expm1(o.logprob_ref - lp);
            if unclipped {
                coef += adv * ratio;
            } else {
                clipped += 1;
            }
            // d lp / d z = onehot(bin) - p
            for (d, p) in dlogits.iter_mut().zip(&f.probs) {
                *d -= coef * p;
            }
            dlogits[o.bin] += coef;
        }
        backward(policy, &g.features, &f, &dlogits, inv, &mut grad);
    }
    stats.clip_fraction = clipped as f64 * inv;
    Ok((stats, grad))
}

pub fn surrogate_objective(policy: &ScorePolicy, groups: &[RolloutGroup], cfg: &RapoConfig) -> Result<f64> {
    Ok(surrogate_objective_grad(policy, groups, cfg)?.0.objective)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub mean_reward: f64,
    pub mean_rank: Option<f64>,
    pub mean_abs: Option<f64>,
    pub mean_binary: Option<f64>,
    pub mean_abs_advantage: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub objective: f64,
    pub train_plcc: Option<f64>,
    pub train_srcc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepReport>,
}

/// Live policy plus the two frozen snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub policy: ScorePolicy,
    old: PolicySnapshot,
    reference: PolicySnapshot,
    pub step: u64,
    velocity: Option<Params>,
    /// Running metrics of every completed step.
    pub history: Vec<StepReport>,
}

impl TrainState {
    /// The reference snapshot is taken here and never changes afterwards.
    pub fn new(policy: ScorePolicy) -> Self {
        let reference = snapshot(&policy, SnapshotRole::Reference);
        let old = snapshot(&policy, SnapshotRole::Old);
        Self { policy, old, reference, step: 0, velocity: None, history: Vec::new() }
    }

    pub fn old(&self) -> &PolicySnapshot {
        &self.old
    }

    pub fn reference(&self) -> &PolicySnapshot {
        &self.reference
    }
}

/// splitmix64 finalizer over a combined key; gives every (seed, a, b) its own stream.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples a group per image from the old snapshot and scores it.
pub fn collect_rollouts(state: &TrainState, batch: &[ImageSample], cfg: &RapoConfig) -> Result<Vec<RolloutGroup>> {
    let old = state.old.policy();
    let mut outputs = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let seed = mix_seed(cfg.seed, state.step + 1, i as u64);
        let mut outs = old.sample_outputs(&s.features, cfg.k, seed)?;
        for o in outs.iter_mut() {
            o.logprob_ref = state.reference.log_prob(&s.features, o.bin)?;
            o.logprob_current = state.policy.log_prob(&s.features, o.bin)?;
        }
        outputs.push(outs);
    }
    // every group's statistics exist before any per-output reward is computed
    let scores: Vec<Vec<f64>> = outputs.iter().map(|g| g.iter().map(|o| o.score).collect()).collect();
    let mos: Vec<f64> = batch.iter().map(|s| s.mos).collect();
    let (stats, rewards) = batch_rewards(cfg.reward_mode, &scores, &mos, &cfg.reward)?;
    let mut groups = Vec::with_capacity(batch.len());
    for (((s, outs), st), rw) in batch.iter().zip(outputs).zip(stats).zip(rewards) {
        let combined: Vec<f64> = rw.iter().map(|r| r.combined).collect();
        groups.push(RolloutGroup {
            sample_id: s.id.clone(),
            features: s.features.clone(),
            mos: s.mos,
            advantages: compute_advantages(&combined)?,
            outputs: outs,
            stats: st,
            rewards: rw,
        });
    }
    Ok(groups)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut n = 0usize;
    let mut acc = 0.0;
    for v in values {
        acc += v?;
        n += 1;
    }
    (n > 0).then(|| acc / n as f64)
}

/// One training step. On error the state is left untouched.
pub fn rapo_step(state: &mut TrainState, batch: &[ImageSample], cfg: &RapoConfig) -> Result<StepReport> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    if cfg.reward_mode.uses_rank() && batch.len() < 2 {
        return Err(Error::RankBatchTooSmall(batch.len()));
    }
    state.old = snapshot(&state.policy, SnapshotRole::Old);
    let groups = collect_rollouts(state, batch, cfg)?;

    let mut policy = state.policy.clone();
    let mut velocity = state.velocity.clone();
    let mut first = None;
    let mut clip_acc = 0.0;
    for _ in 0..cfg.epochs_per_rollout {
        let (stats, grad) = surrogate_objective_grad(&policy, &groups, cfg)?;
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient { step: state.step + 1 });
        }
        first.get_or_insert(stats);
        clip_acc += stats.clip_fraction;
        let dir = match velocity.as_mut() {
            Some(v) if cfg.momentum > 0.0 => {
                v.scale(cfg.momentum);
                v.axpy(1.0, &grad);
                v.clone()
            }
            _ if cfg.momentum > 0.0 => {
                velocity = Some(grad.clone());
                grad
            }
            _ => grad,
        };
        policy.params_mut().axpy(cfg.lr, &dir);
        if !policy.params().is_finite() {
            return Err(Error::NonFiniteGradient { step: state.step + 1 });
        }
    }
    let first = first.unwrap_or_default();

    let all = || groups.iter().flat_map(|g| g.rewards.iter());
    let n_out = all().count() as f64;
    let report = StepReport {
        step: state.step + 1,
        mean_reward: all().map(|r| r.combined).sum::<f64>() / n_out,
        mean_rank: mean_of(all().map(|r| r.rank)),
        mean_abs: mean_of(all().map(|r| r.abs)),
        mean_binary: mean_of(all().map(|r| r.binary)),
        mean_abs_advantage: groups.iter().flat_map(|g| g.advantages.iter()).map(|a| a.abs()).sum::<f64>() / n_out,
        kl: first.kl,
        clip_fraction: clip_acc / cfg.epochs_per_rollout as f64,
        entropy: groups.iter().map(|g| g.outputs[0].entropy_at_sample).sum::<f64>() / groups.len() as f64,
        objective: first.objective,
        train_plcc: None,
        train_srcc: None,
    };
    state.policy = policy;
    state.velocity = velocity;
    state.step += 1;
    state.history.push(report.clone());
    Ok(report)
}

/// Endless stream of seeded mini-batches; each pass over the data is a fresh
/// permutation and a short tail is dropped so a batch never repeats a sample.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch: usize,
    seed: u64,
    pass: u64,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self { n, batch: batch_size.min(n).max(1), seed, pass: 0, perm: Vec::new(), cursor: 0 }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.perm.len() {
            self.perm = seeded_permutation(self.n, mix_seed(self.seed, 0xba7c, self.pass));
            self.pass += 1;
            self.cursor = 0;
        }
        let out = self.perm[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

/// Runs `steps` RAPO steps, calling `hook` after each one; the hook may fill
/// the periodic fields of the report before it is logged.
pub fn train_with<E: From<Error>>(
    state: &mut TrainState,
    dataset: &Dataset,
    cfg: &RapoConfig,
    steps: u64,
    mut hook: impl FnMut(&TrainState, &mut StepReport) -> core::result::Result<(), E>,
) -> core::result::Result<RunLog, E> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset").into());
    }
    if !dataset.is_normalized() {
        return Err(Error::NotNormalized.into());
    }
    let mut log = RunLog::default();
    let mut stream = BatchStream::new(dataset.len(), cfg.batch_size, mix_seed(cfg.seed, 0xda7a, state.step));
    for _ in 0..steps {
        let batch: Vec<ImageSample> = stream.next_batch().into_iter().map(|i| dataset.samples()[i].clone()).collect();
        let mut report = rapo_step(state, &batch, cfg)?;
        hook(state, &mut report)?;
        if let Some(last) = state.history.last_mut() {
            *last = report.clone();
        }
        log.steps.push(report);
    }
    Ok(log)
}

pub fn train(state: &mut TrainState, dataset: &Dataset, cfg: &RapoConfig, steps: u64) -> Result<RunLog> {
    train_with(state, dataset, cfg, steps, |_, _| Ok::<(), Error>(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_generate;

    #[test]
    fn advantages_examples() {
        assert_eq!(compute_advantages(&[0.0, 2.0, 0.0, 2.0]).unwrap(), vec![-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(compute_advantages(&[0.3; 4]).unwrap(), vec![0.0; 4]);
        let a = compute_advantages(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let want = [-1.341641, -0.447214, 0.447214, 1.341641];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(compute_advantages(&[]), Err(Error::Empty("group rewards")));
        assert_eq!(compute_advantages(&[5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(prob_ratio(-1.3, -1.3).unwrap(), 1.0);
        assert!((prob_ratio(-2.0 + core::f64::consts::LN_2, -2.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(prob_ratio(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_approx(-0.7, -0.7).unwrap(), 0.0);
        let ln2 = core::f64::consts::LN_2;
        assert!((kl_approx(-1.0 + ln2, -1.0).unwrap() - 0.306853).abs() < 1e-6);
        assert!((kl_approx(-1.0 - ln2, -1.0).unwrap() - 0.193147).abs() < 1e-6);
        assert!(kl_approx(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn surrogate_examples() {
        for a in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert_eq!(surrogate_term(1.0, a, 0.2, 0.28), a);
        }
        assert!((surrogate_term(1.5, 1.0, 0.2, 0.28) - 1.28).abs() < 1e-15);
        assert!((surrogate_term(0.5, -1.0, 0.2, 0.28) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn defaults_and_validation() {
        let c = RapoConfig::default();
        assert_eq!((c.k, c.beta, c.eps_high, c.reward.sigma), (4, 0.01, 0.28, 0.1));
        c.validate().unwrap();
        let bad = RapoConfig { eps_low: 1.0, ..RapoConfig::default() };
        assert!(bad.validate().is_err());
        let bad = RapoConfig { batch_size: 1, ..RapoConfig::default() };
        assert_eq!(bad.validate(), Err(Error::RankBatchTooSmall(1)));
        let ok = RapoConfig { batch_size: 1, reward_mode: RewardMode::Error, ..RapoConfig::default() };
        ok.validate().unwrap();
    }

    #[test]
    fn constant_rewards_leave_params_unchanged() {
        // one-hot policy: every sample lands in the same bin, so rewards are constant
        let mut p = ScorePolicy::init(3, 4, 11, 1).unwrap();
        p.params_mut().b2[5] = 60.0;
        let ds = synth_generate(4, 3, 0.0, 2).unwrap();
        let cfg = RapoConfig { beta: 0.0, lr: 0.5, reward_mode: RewardMode::Error, batch_size: 4, ..RapoConfig::default() };
        let mut st = TrainState::new(p.clone());
        let rep = rapo_step(&mut st, ds.samples(), &cfg).unwrap();
        assert_eq!(rep.mean_abs_advantage, 0.0);
        assert_eq!(st.policy, p);
    }

    #[test]
    fn rank_mode_rejects_single_image() {
        let ds = synth_generate(1, 3, 0.0, 2).unwrap();
        let mut st = TrainState::new(ScorePolicy::init(3, 4, 11, 1).unwrap());
        let cfg = RapoConfig { batch_size: 2, ..RapoConfig::default() };
        assert_eq!(rapo_step(&mut st, ds.samples(), &cfg).unwrap_err(), Error::RankBatchTooSmall(1));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn zero_steps_is_noop() {
        let ds = synth_generate(8, 3, 0.0, 2).unwrap();
        let mut st = TrainState::new(ScorePolicy::init(3, 4, 11, 1).unwrap());
        let before = st.clone();
        let log = train(&mut st, &ds, &RapoConfig { batch_size: 4, ..RapoConfig::default() }, 0).unwrap();
        assert!(log.steps.is_empty());
        assert_eq!(st, before);
    }

    #[test]
    fn batch_stream_drops_tail() {
        let mut s = BatchStream::new(10, 4, 3);
        let a = s.next_batch();
        let b = s.next_batch();
        let c = s.next_batch();
        assert_eq!((a.len(), b.len(), c.len()), (4, 4, 4));
        let mut ab: Vec<_> = a.iter().chain(&b).copied().collect();
        ab.sort();
        ab.dedup();
        assert_eq!(ab.len(), 8);
        let mut c2 = c.clone();
        c2.sort();
        c2.dedup();
        assert_eq!(c2.len(), 4);
    }

    #[test]
    fn reference_fixed_old_refreshed() {
        let ds = synth_generate(16, 3, 0.05, 2).unwrap();
        let p0 = ScorePolicy::init(3, 8, 21, 1).unwrap();
        let mut st = TrainState::new(p0.clone());
        let cfg = RapoConfig { batch_size: 8, lr: 0.5, ..RapoConfig::default() };
        train(&mut st, &ds, &cfg, 3).unwrap();
        assert_eq!(st.reference().policy(), &p0);
        assert_ne!(st.old().policy(), &p0);
        assert_eq!(st.history.len(), 3);
    }

    use crate::dataset::{Dataset, Provenance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probs_direct(p: &ScorePolicy, x: &[f64]) -> Vec<f64> {
        let (d, h, b) = (p.dim(), p.hidden(), p.bins());
        let w = p.params();
        let hid: Vec<f64> = (0..h)
            .map(|j| libm::tanh(w.b1[j] + (0..d).map(|i| x[i] * w.w1[i * h + j]).sum::<f64>()))
            .collect();
        let z: Vec<f64> = (0..b).map(|k| w.b2[k] + (0..h).map(|j| hid[j] * w.w2[j * b + k]).sum::<f64>()).collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| libm::exp(v - m)).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    // rollouts whose old and reference policies differ from the one being evaluated
    fn random_groups(rng: &mut ChaCha8Rng, d: usize, h: usize, b: usize) -> (ScorePolicy, Vec<RolloutGroup>, RapoConfig) {
        let cur = ScorePolicy::init(d, h, b, rng.random()).unwrap();
        let mut old = cur.clone();
        for v in old.params_mut().iter_mut() {
            *v += 0.3 * (rng.random::<f64>() - 0.5);
        }
        let reference = ScorePolicy::init(d, h, b, rng.random()).unwrap();
        let k = rng.random_range(2..6);
        let n = rng.random_range(1..4);
        let mut groups = Vec::new();
        for i in 0..n {
            let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let mut outs = old.sample_outputs(&x, k, rng.random()).unwrap();
            for o in outs.iter_mut() {
                o.logprob_ref = reference.log_prob(&x, o.bin).unwrap();
            }
            let adv: Vec<f64> = (0..k).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
            groups.push(RolloutGroup {
                sample_id: alloc::format!("g{i}"),
                features: x,
                mos: 0.5,
                rewards: vec![RewardBreakdown { rank: None, abs: None, binary: None, combined: 0.0 }; k],
                outputs: outs,
                stats: GroupStats { mu: 0.5, var: 0.0 },
                advantages: adv,
            });
        }
        let cfg = RapoConfig { beta: rng.random::<f64>() * 0.2, eps_low: 0.1, eps_high: 0.15, ..RapoConfig::default() };
        (cur, groups, cfg)
    }

    #[test]
    fn objective_matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let (p, groups, cfg) = random_groups(&mut rng, 3, 5, 9);
            let mut acc = 0.0;
            let mut count = 0.0;
            for g in &groups {
                let probs = probs_direct(&p, &g.features);
                for (o, a) in g.outputs.iter().zip(&g.advantages) {
                    let pi = probs[o.bin];
                    let r = pi / libm::exp(o.logprob_old);
                    let c = if r < 1.0 - cfg.eps_low { 1.0 - cfg.eps_low } else if r > 1.0 + cfg.eps_high { 1.0 + cfg.eps_high } else { r };
                    let surr = if r * a < c * a { r * a } else { c * a };
                    let u = libm::exp(o.logprob_ref) / pi;
                    acc += surr - cfg.beta * (u - libm::log(u) - 1.0);
                    count += 1.0;
                }
            }
            let got = surrogate_objective(&p, &groups, &cfg).unwrap();
            assert!((got - acc / count).abs() < 1e-10, "{got} vs {}", acc / count);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let step = 1e-5;
        for _ in 0..20 {
            let (p, groups, cfg) = random_groups(&mut rng, 3, 4, 7);
            let (_, grad) = surrogate_objective_grad(&p, &groups, &cfg).unwrap();
            let analytic: Vec<f64> = grad.iter().copied().collect();
            for idx in 0..analytic.len() {
                let mut plus = p.clone();
                *plus.params_mut().iter_mut().nth(idx).unwrap() += step;
                let mut minus = p.clone();
                *minus.params_mut().iter_mut().nth(idx).unwrap() -= step;
                let fd = (surrogate_objective(&plus, &groups, &cfg).unwrap()
                    - surrogate_objective(&minus, &groups, &cfg).unwrap())
                    / (2.0 * step);
                let err = (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-6);
                assert!(err <= 1e-4, "param {idx}: fd {fd} analytic {}", analytic[idx]);
            }
        }
    }

    #[test]
    fn enumerated_outputs_give_expected_reward_gradient() {
        // one output per bin with A_b = B p_b R_b at ratio 1 turns the step
        // gradient into the exact gradient of sum_b p_b R_b
        let b = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let p = ScorePolicy::init(2, 3, b, rng.random()).unwrap();
            let x: Vec<f64> = (0..2).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let rew: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
            let probs = p.probs(&x).unwrap();
            let outputs: Vec<SampledOutput> = (0..b)
                .map(|bin| {
                    let lp = p.log_prob(&x, bin).unwrap();
                    SampledOutput {
                        bin,
                        score: p.bin_value(bin),
                        logprob_current: lp,
                        logprob_old: lp,
                        logprob_ref: lp,
                        entropy_at_sample: 0.0,
                    }
                })
                .collect();
            let group = RolloutGroup {
                sample_id: "e".into(),
                features: x.clone(),
                mos: 0.5,
                rewards: vec![RewardBreakdown { rank: None, abs: None, binary: None, combined: 0.0 }; b],
                outputs,
                stats: GroupStats { mu: 0.5, var: 0.0 },
                advantages: (0..b).map(|k| b as f64 * probs[k] * rew[k]).collect(),
            };
            let cfg = RapoConfig { beta: 0.0, ..RapoConfig::default() };
            let (_, grad) = surrogate_objective_grad(&p, &[group], &cfg).unwrap();
            let expected = |q: &ScorePolicy| q.probs(&x).unwrap().iter().zip(&rew).map(|(a, r)| a * r).sum::<f64>();
            for (idx, g) in grad.iter().enumerate() {
                let mut plus = p.clone();
                *plus.params_mut().iter_mut().nth(idx).unwrap() += 1e-5;
                let mut minus = p.clone();
                *minus.params_mut().iter_mut().nth(idx).unwrap() -= 1e-5;
                let fd = (expected(&plus) - expected(&minus)) / 2e-5;
                assert!((fd - g).abs() < 1e-8, "param {idx}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn single_image_absolute_reward_calibrates() {
        let sample = ImageSample { id: "only".into(), features: vec![0.4, -0.2, 0.9], mos: 0.73 };
        let ds = Dataset::new(vec![sample.clone()], Provenance::Synthetic, true).unwrap();
        let mut st = TrainState::new(ScorePolicy::init(3, 8, 51, 5).unwrap());
        let cfg = RapoConfig { reward_mode: RewardMode::Error, batch_size: 1, lr: 0.05, seed: 3, ..RapoConfig::default() };
        train(&mut st, &ds, &cfg, 2000).unwrap();
        let pred = st.policy.expected_score(&sample.features).unwrap();
        assert!((pred - 0.73).abs() < 0.02, "prediction {pred}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synth_generate(32, 3, 0.05, 4).unwrap();
        let run = || {
            let mut st = TrainState::new(ScorePolicy::init(3, 6, 21, 9).unwrap());
            let cfg = RapoConfig { batch_size: 8, lr: 0.05, momentum: 0.5, seed: 12, ..RapoConfig::default() };
            let log = train(&mut st, &ds, &cfg, 20).unwrap();
            (st, log)
        };
        assert_eq!(run(), run());
    }
}
