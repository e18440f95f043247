//! Policy-gradient controllers over independent per-dimension softmax
//! policies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{draw_valid, sample_categorical, Controller};
use crate::search_space::{PipelineConfig, SearchSpace};

const STD_EPS: f64 = 1e-8;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group-normalized advantages `(r - mean) / (std + 1e-8)`, population std.
pub fn grpo_advantages(rewards: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(rewards);
    rewards.iter().map(|r| (r - mean) / (std + STD_EPS)).collect()
}

/// Mean-centred advantages without scale normalization.
pub fn dr_grpo_advantages(rewards: &[f64]) -> Vec<f64> {
    let (mean, _) = mean_std(rewards);
    rewards.iter().map(|r| r - mean).collect()
}

/// Gradient of the softmax entropy with respect to the logits:
/// `-p_j * (ln p_j + H)`.
pub fn entropy_gradient(probs: &[f64]) -> Vec<f64> {
    let h: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    probs.iter().map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 }).collect()
}

/// Adds `step * (onehot(chosen) - p)` to each dimension's logits.
fn push_logits(logits: &mut [Vec<f64>], probs: &[Vec<f64>], config: &PipelineConfig, step: f64) {
    for (d, &chosen) in config.indices().iter().enumerate() {
        for (j, z) in logits[d].iter_mut().enumerate() {
            let onehot = if j == chosen { 1.0 } else { 0.0 };
            *z += step * (onehot - probs[d][j]);
        }
    }
}

fn sample_policy(space: &SearchSpace, rng: &mut ChaCha8Rng, logits: &[Vec<f64>]) -> PipelineConfig {
    let probs: Vec<Vec<f64>> = logits.iter().map(|z| softmax(z)).collect();
    draw_valid(space, rng, |rng| {
        let idx = probs.iter().map(|p| sample_categorical(rng, p)).collect();
        PipelineConfig::from_indices(idx)
    })
}

/// GRPO and Dr. GRPO: groups of samples from the current policy are scored,
/// then every member pushes the logits by `lr * advantage * (onehot - p)`,
/// with `p` the policy the group was drawn from. Every group member is one
/// budgeted trial.
pub struct Grpo {
    space: SearchSpace,
    rng: ChaCha8Rng,
    group: usize,
    lr: f64,
    normalize: bool,
    logits: Vec<Vec<f64>>,
    results: Vec<(PipelineConfig, f64)>,
}

impl Grpo {
    pub fn new(space: &SearchSpace, seed: u64, group: usize, lr: f64, normalize: bool) -> Self {
        Grpo {
            space: space.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            group,
            lr,
            normalize,
            logits: space.dimensions().iter().map(|d| vec![0.0; d.len()]).collect(),
            results: Vec::new(),
        }
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    /// Applies one group update.
    pub fn update(&mut self, group: &[(PipelineConfig, f64)]) {
        let rewards: Vec<f64> = group.iter().map(|(_, r)| *r).collect();
        let adv = if self.normalize { grpo_advantages(&rewards) } else { dr_grpo_advantages(&rewards) };
        let probs: Vec<Vec<f64>> = self.logits.iter().map(|z| softmax(z)).collect();
        for ((c, _), a) in group.iter().zip(adv) {
            push_logits(&mut self.logits, &probs, c, self.lr * a);
        }
    }
}

impl Controller for Grpo {
    fn id(&self) -> &str {
        if self.normalize {
            "grpo"
        } else {
            "dr_grpo"
        }
    }

    fn propose(&mut self) -> PipelineConfig {
        sample_policy(&self.space, &mut self.rng, &self.logits)
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        self.results.push((config.clone(), reward));
        if self.results.len() >= self.group {
            let group = std::mem::take(&mut self.results);
            self.update(&group);
        }
    }
}

/// REINFORCE with a global running baseline: advantage
/// `(r - mean) / (std + 1e-8)` over all rewards so far (0 on the first
/// trial), updated after every trial, plus an entropy bonus.
pub struct ReinforcePlusPlus {
    space: SearchSpace,
    rng: ChaCha8Rng,
    lr: f64,
    entropy: f64,
    logits: Vec<Vec<f64>>,
    count: usize,
    mean: f64,
    m2: f64,
}

impl ReinforcePlusPlus {
    pub fn new(space: &SearchSpace, seed: u64, lr: f64, entropy: f64) -> Self {
        ReinforcePlusPlus {
            space: space.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            lr,
            entropy,
            logits: space.dimensions().iter().map(|d| vec![0.0; d.len()]).collect(),
            count: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    /// Replaces the initial (all-zero) logits, e.g. to warm-start a policy.
    pub fn with_logits(mut self, logits: Vec<Vec<f64>>) -> Self {
        assert_eq!(logits.len(), self.logits.len(), "one logit vector per dimension");
        self.logits = logits;
        self
    }

    /// Folds `reward` into the running statistics and returns its advantage.
    pub fn advantage(&mut self, reward: f64) -> f64 {
        self.count += 1;
        let delta = reward - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (reward - self.mean);
        if self.count == 1 {
            return 0.0;
        }
        let std = (self.m2 / self.count as f64).sqrt();
        (reward - self.mean) / (std + STD_EPS)
    }
}

impl Controller for ReinforcePlusPlus {
    fn id(&self) -> &str {
        "reinforce_pp"
    }

    fn propose(&mut self) -> PipelineConfig {
        sample_policy(&self.space, &mut self.rng, &self.logits)
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        let a = self.advantage(reward);
        let probs: Vec<Vec<f64>> = self.logits.iter().map(|z| softmax(z)).collect();
        push_logits(&mut self.logits, &probs, config, self.lr * a);
        for (z, p) in self.logits.iter_mut().zip(&probs) {
            for (zj, g) in z.iter_mut().zip(entropy_gradient(p)) {
                *zj += self.lr * self.entropy * g;
            }
        }
    }
}
