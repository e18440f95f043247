//! Factored bandits: independent arm statistics per (dimension, value).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use super::{argmax_valid, Controller};
use crate::search_space::{PipelineConfig, SearchSpace};

/// Beta-Bernoulli Thompson sampling with fractional updates
/// `alpha += r`, `beta += 1 - r` for each value in an observed config.
pub struct Thompson {
    space: SearchSpace,
    rng: ChaCha8Rng,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

impl Thompson {
    pub fn new(space: &SearchSpace, seed: u64, prior_alpha: f64, prior_beta: f64) -> Self {
        Thompson {
            space: space.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            alpha: space.dimensions().iter().map(|d| vec![prior_alpha; d.len()]).collect(),
            beta: space.dimensions().iter().map(|d| vec![prior_beta; d.len()]).collect(),
        }
    }

    /// Posterior parameters `(alpha, beta)` of one arm.
    pub fn posterior(&self, dim: usize, value: usize) -> (f64, f64) {
        (self.alpha[dim][value], self.beta[dim][value])
    }
}

impl Controller for Thompson {
    fn id(&self) -> &str {
        "thompson"
    }

    fn propose(&mut self) -> PipelineConfig {
        let draws: Vec<Vec<f64>> = self
            .alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(&a, &b)| Beta::new(a, b).expect("posterior parameters stay positive").sample(&mut self.rng))
                    .collect()
            })
            .collect();
        argmax_valid(&self.space, &mut self.rng, &draws)
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        for (d, &v) in config.indices().iter().enumerate() {
            self.alpha[d][v] += reward;
            self.beta[d][v] += 1.0 - reward;
        }
    }
}

/// `mean + c * sqrt(ln(total) / n)`; an unvisited arm scores `+inf`.
pub fn ucb_score(mean: f64, n: usize, total: usize, c: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    mean + c * ((total as f64).ln() / n as f64).sqrt()
}

/// Factored UCB1; per-dimension argmax with ties to the lower value index.
pub struct Ucb {
    space: SearchSpace,
    rng: ChaCha8Rng,
    c: f64,
    sums: Vec<Vec<f64>>,
    counts: Vec<Vec<usize>>,
    total: usize,
}

impl Ucb {
    pub fn new(space: &SearchSpace, seed: u64, c: f64) -> Self {
        Ucb {
            space: space.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            c,
            sums: space.dimensions().iter().map(|d| vec![0.0; d.len()]).collect(),
            counts: space.dimensions().iter().map(|d| vec![0; d.len()]).collect(),
            total: 0,
        }
    }

    pub fn scores(&self) -> Vec<Vec<f64>> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(s, n)| {
                s.iter()
                    .zip(n)
                    .map(|(&s, &n)| ucb_score(if n == 0 { 0.0 } else { s / n as f64 }, n, self.total, self.c))
                    .collect()
            })
            .collect()
    }
}

impl Controller for Ucb {
    fn id(&self) -> &str {
        "ucb"
    }

    fn propose(&mut self) -> PipelineConfig {
        let scores = self.scores();
        argmax_valid(&self.space, &mut self.rng, &scores)
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        for (d, &v) in config.indices().iter().enumerate() {
            self.sums[d][v] += reward;
            self.counts[d][v] += 1;
        }
        self.total += 1;
    }
}
