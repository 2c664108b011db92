//! Categorical score policy.
//!
//! Features pass through `tanh(x W1 + b1)` and a linear layer onto `B`
//! logits; a softmax over those logits is the distribution over score bins
//! `k / (B - 1)`. Gradients are computed analytically by [`backward`].

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSample;
use crate::error::{Error, Result};

/// The four parameter blocks of the network, also used as a gradient record.
///
/// `w1` is `dim x hidden` and `w2` is `hidden x bins`, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Params {
    pub fn zeros(dim: usize, hidden: usize, bins: usize) -> Self {
        Self { w1: vec![0.0; dim * hidden], b1: vec![0.0; hidden], w2: vec![0.0; hidden * bins], b2: vec![0.0; bins] }
    }

    pub fn zeros_like(other: &Params) -> Self {
        Self {
            w1: vec![0.0; other.w1.len()],
            b1: vec![0.0; other.b1.len()],
            w2: vec![0.0; other.w2.len()],
            b2: vec![0.0; other.b2.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1.iter_mut().chain(self.b1.iter_mut()).chain(self.w2.iter_mut()).chain(self.b2.iter_mut())
    }

    /// Named blocks, in storage order.
    pub fn blocks(&self) -> [(&'static str, &[f64]); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.iter().map(|v| v * v).sum())
    }
}

/// Feed-forward scorer emitting a categorical distribution over score bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePolicy {
    dim: usize,
    hidden: usize,
    bins: usize,
    params: Params,
    bin_values: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_norm: f64,
}

fn bin_grid(bins: usize) -> Vec<f64> {
    let top = (bins - 1) as f64;
    (0..bins).map(|k| k as f64 / top).collect()
}

impl ScorePolicy {
    /// All-zero parameters: the uniform distribution for every input.
    pub fn zeros(dim: usize, hidden: usize, bins: usize) -> Result<Self> {
        Self::from_params(dim, hidden, bins, Params::zeros(dim, hidden, bins))
    }

    /// Seeded small-uniform initialization: `w1 ~ U(+-1/sqrt(dim))`,
    /// `w2 ~ U(+-0.1/sqrt(hidden))`, zero biases.
    pub fn init(dim: usize, hidden: usize, bins: usize, seed: u64) -> Result<Self> {
        let mut p = Params::zeros(dim, hidden, bins);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / libm::sqrt(dim.max(1) as f64);
        let a2 = 0.1 / libm::sqrt(hidden.max(1) as f64);
        for w in p.w1.iter_mut() {
            *w = rng.random_range(-a1..a1);
        }
        for w in p.w2.iter_mut() {
            *w = rng.random_range(-a2..a2);
        }
        Self::from_params(dim, hidden, bins, p)
    }

    pub fn from_params(dim: usize, hidden: usize, bins: usize, params: Params) -> Result<Self> {
        let policy = Self { dim, hidden, bins, params, bin_values: if bins >= 2 { bin_grid(bins) } else { Vec::new() } };
        policy.validate()?;
        Ok(policy)
    }

    /// Checks shapes, bin grid and finiteness; deserialized policies should pass through here.
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidArgument(alloc::format!("need at least 2 bins, got {}", self.bins)));
        }
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("dim and hidden must be positive".into()));
        }
        let p = &self.params;
        let shapes = [
            (p.w1.len(), self.dim * self.hidden),
            (p.b1.len(), self.hidden),
            (p.w2.len(), self.hidden * self.bins),
            (p.b2.len(), self.bins),
            (self.bin_values.len(), self.bins),
        ];
        for (got, expected) in shapes {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        if self.bin_values != bin_grid(self.bins) {
            return Err(Error::InvalidArgument("bin values must be k / (B - 1)".into()));
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access for optimizers. Callers must keep values finite.
    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn bin_values(&self) -> &[f64] {
        &self.bin_values
    }

    pub fn bin_value(&self, bin: usize) -> f64 {
        self.bin_values[bin]
    }

    /// Bin nearest to `score`; exact ties go to the lower bin.
    pub fn nearest_bin(&self, score: f64) -> usize {
        let top = (self.bins - 1) as f64;
        let x = (score.clamp(0.0, 1.0)) * top;
        let lo = libm::floor(x);
        let bin = if x - lo > 0.5 { lo + 1.0 } else { lo };
        (bin as usize).min(self.bins - 1)
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: features.len() });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(())
    }

    fn check_bin(&self, bin: usize) -> Result<()> {
        if bin >= self.bins {
            return Err(Error::BinOutOfRange { bin, bins: self.bins });
        }
        Ok(())
    }

    pub fn forward(&self, features: &[f64]) -> Result<Forward> {
        self.check_features(features)?;
        if !self.params.is_finite() {
            return Err(Error::NonFinite("policy parameters"));
        }
        let (h, b) = (self.hidden, self.bins);
        let p = &self.params;
        let mut hidden = p.b1.clone();
        for (i, &x) in features.iter().enumerate() {
            if x != 0.0 {
                for (acc, w) in hidden.iter_mut().zip(&p.w1[i * h..(i + 1) * h]) {
                    *acc += x * w;
                }
            }
        }
        for a in hidden.iter_mut() {
            *a = libm::tanh(*a);
        }
        let mut logits = p.b2.clone();
        for (j, &a) in hidden.iter().enumerate() {
            for (acc, w) in logits.iter_mut().zip(&p.w2[j * b..(j + 1) * b]) {
                *acc += a * w;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
        let sum: f64 = probs.iter().sum();
        for q in probs.iter_mut() {
            *q /= sum;
        }
        let log_norm = max + libm::log(sum);
        Ok(Forward { hidden, logits, probs, log_norm })
    }

    pub fn forward_logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(features)?.logits)
    }

    pub fn probs(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(features)?.probs)
    }

    pub fn log_prob(&self, features: &[f64], bin: usize) -> Result<f64> {
        self.check_bin(bin)?;
        let f = self.forward(features)?;
        Ok(f.logits[bin] - f.log_norm)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self, features: &[f64]) -> Result<f64> {
        let f = self.forward(features)?;
        Ok(entropy_of(&f))
    }

    /// Mean score under the policy distribution.
    pub fn expected_score(&self, features: &[f64]) -> Result<f64> {
        let probs = self.probs(features)?;
        Ok(probs.iter().zip(&self.bin_values).map(|(p, v)| p * v).sum())
    }

    /// Value of the most probable bin (lowest bin on ties).
    pub fn argmax_score(&self, features: &[f64]) -> Result<f64> {
        let probs = self.probs(features)?;
        let mut best = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = k;
            }
        }
        Ok(self.bin_values[best])
    }

    pub fn grad_log_prob(&self, features: &[f64], bin: usize) -> Result<Params> {
        self.check_bin(bin)?;
        let f = self.forward(features)?;
        let mut dlogits: Vec<f64> = f.probs.iter().map(|p| -p).collect();
        dlogits[bin] += 1.0;
        let mut grad = Params::zeros_like(&self.params);
        backward(self, features, &f, &dlogits, 1.0, &mut grad);
        Ok(grad)
    }

    /// `K` independent draws, seeded. `logprob_old` and `logprob_ref` are set
    /// equal to `logprob_current`; callers holding other snapshots overwrite them.
    pub fn sample_outputs(&self, features: &[f64], k: usize, seed: u64) -> Result<Vec<SampledOutput>> {
        if k == 0 {
            return Err(Error::InvalidArgument("group size K must be positive".into()));
        }
        let f = self.forward(features)?;
        let entropy = entropy_of(&f);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = (0..k)
            .map(|_| {
                let bin = draw(&f.probs, rng.random::<f64>());
                let lp = f.logits[bin] - f.log_norm;
                SampledOutput {
                    bin,
                    score: self.bin_values[bin],
                    logprob_current: lp,
                    logprob_old: lp,
                    logprob_ref: lp,
                    entropy_at_sample: entropy,
                }
            })
            .collect();
        Ok(out)
    }
}

fn entropy_of(f: &Forward) -> f64 {
    // H = log Z - sum p z
    let mean_logit: f64 = f.probs.iter().zip(&f.logits).map(|(p, z)| p * z).sum();
    (f.log_norm - mean_logit).max(0.0)
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = k;
            acc += p;
            if u < acc {
                return k;
            }
        }
    }
    last
}

/// Accumulates `scale * d(sum_k dlogits_k * logit_k)/dtheta` into `grad`.
pub fn backward(policy: &ScorePolicy, features: &[f64], f: &Forward, dlogits: &[f64], scale: f64, grad: &mut Params) {
    let (h, b) = (policy.hidden, policy.bins);
    let p = &policy.params;
    let mut dpre = vec![0.0; h];
    for j in 0..h {
        let a = f.hidden[j];
        let row = &p.w2[j * b..(j + 1) * b];
        let grow = &mut grad.w2[j * b..(j + 1) * b];
        let mut da = 0.0;
        for k in 0..b {
            let g = scale * dlogits[k];
            grow[k] += a * g;
            da += row[k] * g;
        }
        dpre[j] = da * (1.0 - a * a);
    }
    for (g, &d) in grad.b2.iter_mut().zip(dlogits) {
        *g += scale * d;
    }
    for (g, &d) in grad.b1.iter_mut().zip(&dpre) {
        *g += d;
    }
    for (i, &x) in features.iter().enumerate() {
        if x != 0.0 {
            for (g, &d) in grad.w1[i * h..(i + 1) * h].iter_mut().zip(&dpre) {
                *g += x * d;
            }
        }
    }
}

/// One sampled score together with its log-probabilities under the live,
/// old and reference policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledOutput {
    pub bin: usize,
    pub score: f64,
    pub logprob_current: f64,
    pub logprob_old: f64,
    pub logprob_ref: f64,
    pub entropy_at_sample: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotRole {
    Old,
    Reference,
}

/// Frozen copy of a policy. There is no mutable access to the inner policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    policy: ScorePolicy,
    role: SnapshotRole,
}

impl PolicySnapshot {
    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn policy(&self) -> &ScorePolicy {
        &self.policy
    }

    pub fn log_prob(&self, features: &[f64], bin: usize) -> Result<f64> {
        self.policy.log_prob(features, bin)
    }
}

pub fn snapshot(policy: &ScorePolicy, role: SnapshotRole) -> PolicySnapshot {
    PolicySnapshot { policy: policy.clone(), role }
}

/// Mean cross-entropy of the batch against each sample's nearest bin, and its gradient.
pub fn warm_start_loss_grad(policy: &ScorePolicy, batch: &[ImageSample]) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::Empty("warm-start batch"));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grad = Params::zeros_like(&policy.params);
    let mut loss = 0.0;
    for s in batch {
        let target = policy.nearest_bin(s.mos);
        let f = policy.forward(&s.features)?;
        loss += f.log_norm - f.logits[target];
        // d(-log p_t)/dz = p - onehot(t)
        let mut dlogits = f.probs.clone();
        dlogits[target] -= 1.0;
        backward(policy, &s.features, &f, &dlogits, inv, &mut grad);
    }
    Ok((loss * inv, grad))
}

/// One gradient-descent step on the warm-start cross-entropy. Returns the
/// updated policy and the loss before the step.
pub fn warm_start_step(policy: &ScorePolicy, batch: &[ImageSample], lr: f64) -> Result<(ScorePolicy, f64)> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(alloc::format!("learning rate {lr} must be finite and non-negative")));
    }
    let (loss, grad) = warm_start_loss_grad(policy, batch)?;
    let mut next = policy.clone();
    if lr > 0.0 {
        next.params.axpy(-lr, &grad);
        if !next.params.is_finite() {
            return Err(Error::NonFinite("warm-start update"));
        }
    }
    Ok((next, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn rand_features(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    /// Policy with larger weights than `init` so gradients are far from trivial.
    fn rough_policy(d: usize, h: usize, b: usize, seed: u64) -> ScorePolicy {
        let mut p = ScorePolicy::init(d, h, b, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for v in p.params_mut().iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn zero_policy_is_uniform() {
        let p = ScorePolicy::zeros(3, 4, 101).unwrap();
        let probs = p.probs(&[0.3, -1.0, 2.0]).unwrap();
        assert!(probs.iter().all(|&q| (q - 1.0 / 101.0).abs() < 1e-15));
        assert!((p.log_prob(&[0.3, -1.0, 2.0], 17).unwrap() - libm::log(1.0 / 101.0)).abs() < 1e-12);
        assert!((p.entropy(&[0.0; 3]).unwrap() - libm::log(101.0)).abs() < 1e-12);
        assert!((p.entropy(&[0.0; 3]).unwrap() - 4.61512).abs() < 1e-5);
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let p = rough_policy(5, 7, 11, 3);
        let x = rand_features(5, 4);
        assert_eq!(p.forward_logits(&x).unwrap(), p.forward_logits(&x).unwrap());
        let s: f64 = p.probs(&x).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let lp_sum: f64 = (0..11).map(|b| libm::exp(p.log_prob(&x, b).unwrap())).sum();
        assert!((lp_sum - 1.0).abs() < 1e-10);
        let probs = p.probs(&x).unwrap();
        for b in 0..11 {
            assert!((p.log_prob(&x, b).unwrap() - libm::log(probs[b])).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_errors() {
        let p = ScorePolicy::zeros(3, 4, 5).unwrap();
        assert_eq!(p.forward(&[1.0]).unwrap_err(), Error::DimensionMismatch { expected: 3, got: 1 });
        assert_eq!(p.log_prob(&[0.0; 3], 5).unwrap_err(), Error::BinOutOfRange { bin: 5, bins: 5 });
        assert!(p.grad_log_prob(&[0.0; 3], 9).is_err());
        let mut bad = p.clone();
        bad.params_mut().b2[0] = f64::NAN;
        assert_eq!(bad.forward(&[0.0; 3]).unwrap_err(), Error::NonFinite("policy parameters"));
        assert!(ScorePolicy::zeros(3, 4, 1).is_err());
    }

    #[test]
    fn entropy_limits() {
        let mut p = ScorePolicy::zeros(2, 3, 101).unwrap();
        p.params_mut().b2[40] = 50.0;
        assert!(p.entropy(&[0.1, 0.2]).unwrap() < 1e-3);
        let mut p = ScorePolicy::zeros(2, 3, 101).unwrap();
        for (k, v) in p.params_mut().b2.iter_mut().enumerate() {
            *v = if k < 2 { 3.0 } else { -1e3 };
        }
        assert!((p.entropy(&[0.1, 0.2]).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn sampling() {
        let p = ScorePolicy::zeros(2, 3, 101).unwrap();
        let out = p.sample_outputs(&[0.5, 0.5], 4, 1).unwrap();
        assert_eq!(out.len(), 4);
        for o in &out {
            assert!((o.logprob_current - libm::log(1.0 / 101.0)).abs() < 1e-12);
            assert_eq!(o.score, o.bin as f64 / 100.0);
        }
        assert_eq!(out, p.sample_outputs(&[0.5, 0.5], 4, 1).unwrap());
        let mut peaked = p.clone();
        peaked.params_mut().b2[63] = 50.0;
        assert!(peaked.sample_outputs(&[0.5, 0.5], 64, 2).unwrap().iter().all(|o| o.bin == 63));
        assert!(p.sample_outputs(&[0.5, 0.5], 0, 1).is_err());
    }

    #[test]
    fn sampling_frequencies_follow_probs() {
        let p = rough_policy(2, 3, 5, 8);
        let x = [0.4, -0.2];
        let probs = p.probs(&x).unwrap();
        let n = 20_000;
        let mut counts = [0usize; 5];
        for o in p.sample_outputs(&x, n, 5).unwrap() {
            counts[o.bin] += 1;
        }
        for k in 0..5 {
            let freq = counts[k] as f64 / n as f64;
            assert!((freq - probs[k]).abs() < 0.02, "bin {k}: {freq} vs {}", probs[k]);
        }
    }

    fn fd_check(p: &ScorePolicy, x: &[f64], bin: usize) {
        let g = p.grad_log_prob(x, bin).unwrap();
        let step = 1e-5;
        let mut q = p.clone();
        let n = p.params().len();
        for idx in 0..n {
            let orig = *q.params().iter().nth(idx).unwrap();
            *q.params_mut().iter_mut().nth(idx).unwrap() = orig + step;
            let up = q.log_prob(x, bin).unwrap();
            *q.params_mut().iter_mut().nth(idx).unwrap() = orig - step;
            let down = q.log_prob(x, bin).unwrap();
            *q.params_mut().iter_mut().nth(idx).unwrap() = orig;
            let fd = (up - down) / (2.0 * step);
            let an = *g.iter().nth(idx).unwrap();
            let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel <= 1e-4, "{}", format!("param {idx}: analytic {an} fd {fd}"));
        }
    }

    #[test]
    fn grad_log_prob_matches_finite_differences() {
        for t in 0..20u64 {
            let p = rough_policy(3, 4, 6, 100 + t);
            let x = rand_features(3, 200 + t);
            fd_check(&p, &x, (t as usize) % 6);
        }
    }

    #[test]
    fn zero_features_zero_w1_grad() {
        let p = rough_policy(3, 4, 6, 1);
        let g = p.grad_log_prob(&[0.0; 3], 2).unwrap();
        assert!(g.w1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_function_identity() {
        let p = rough_policy(3, 4, 6, 9);
        let x = rand_features(3, 10);
        let probs = p.probs(&x).unwrap();
        let mut acc = Params::zeros_like(p.params());
        for b in 0..6 {
            acc.axpy(probs[b], &p.grad_log_prob(&x, b).unwrap());
        }
        assert!(acc.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn nearest_bin_ties_down() {
        let p = ScorePolicy::zeros(1, 1, 5).unwrap();
        assert_eq!(p.nearest_bin(0.125), 0);
        assert_eq!(p.nearest_bin(0.126), 1);
        assert_eq!(p.nearest_bin(1.0), 4);
        assert_eq!(p.nearest_bin(0.0), 0);
    }

    fn one_sample(mos: f64) -> ImageSample {
        ImageSample { id: "a".into(), features: vec![0.5, -0.3, 1.2], mos }
    }

    #[test]
    fn warm_start_uniform_loss_and_zero_lr() {
        let p = ScorePolicy::zeros(3, 8, 101).unwrap();
        let (next, loss) = warm_start_step(&p, &[one_sample(0.2), one_sample(0.9)], 0.0).unwrap();
        assert!((loss - libm::log(101.0)).abs() < 1e-12);
        assert_eq!(next, p);
        assert_eq!(warm_start_step(&p, &[], 0.1).unwrap_err(), Error::Empty("warm-start batch"));
    }

    #[test]
    fn warm_start_converges_on_single_sample() {
        let mut p = ScorePolicy::init(3, 32, 101, 4).unwrap();
        let batch = [one_sample(0.37)];
        for _ in 0..500 {
            p = warm_start_step(&p, &batch, 0.1).unwrap().0;
        }
        let prob = libm::exp(p.log_prob(&batch[0].features, 37).unwrap());
        assert!(prob > 0.99, "target probability {prob}");
    }

    #[test]
    fn warm_start_monotone_at_small_lr() {
        let mut p = ScorePolicy::init(3, 16, 21, 5).unwrap();
        let batch: Vec<_> = (0..6)
            .map(|i| ImageSample { id: format!("{i}"), features: rand_features(3, i), mos: i as f64 / 6.0 })
            .collect();
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let (next, loss) = warm_start_step(&p, &batch, 1e-3).unwrap();
            assert!(loss <= prev + 1e-9);
            prev = loss;
            p = next;
        }
    }

    #[test]
    fn snapshot_is_frozen() {
        let mut live = rough_policy(3, 4, 6, 2);
        let x = rand_features(3, 3);
        let snap = snapshot(&live, SnapshotRole::Old);
        assert_eq!(snap.role(), SnapshotRole::Old);
        let before = snap.log_prob(&x, 1).unwrap();
        assert_eq!(live.log_prob(&x, 1).unwrap() - before, 0.0);
        live.params_mut().b2[1] += 1.0;
        assert_eq!(snap.log_prob(&x, 1).unwrap(), before);
        let again = snapshot(snap.policy(), SnapshotRole::Reference);
        assert_eq!(again.policy(), snap.policy());
    }
}
