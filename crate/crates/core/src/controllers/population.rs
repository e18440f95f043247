//! Model-based and population-based controllers.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{draw_valid, sample_categorical, uniform, Controller};
use crate::search_space::{PipelineConfig, SearchSpace};

/// Add-one smoothed categorical density of `counts` over `n` observations.
pub fn smoothed_density(counts: &[usize], n: usize) -> Vec<f64> {
    let denom = (n + counts.len()) as f64;
    counts.iter().map(|&c| (c as f64 + 1.0) / denom).collect()
}

fn value_counts(space: &SearchSpace, configs: &[&PipelineConfig]) -> Vec<Vec<usize>> {
    let mut counts: Vec<Vec<usize>> = space.dimensions().iter().map(|d| vec![0; d.len()]).collect();
    for c in configs {
        for (d, &i) in c.indices().iter().enumerate() {
            counts[d][i] += 1;
        }
    }
    counts
}

/// Tree-structured Parzen estimator with independent per-dimension
/// categorical densities.
///
/// After `startup` uniform trials, observations are sorted by reward (stable,
/// so equal rewards keep trial order) and the top `ceil(gamma * n)` form the
/// good set. Candidates are drawn from the good density and the one with the
/// largest `prod_d l_d / g_d` is proposed.
pub struct Tpe {
    space: SearchSpace,
    rng: ChaCha8Rng,
    gamma: f64,
    candidates: usize,
    startup: usize,
    observations: Vec<(PipelineConfig, f64)>,
}

impl Tpe {
    pub fn new(space: &SearchSpace, seed: u64, gamma: f64, candidates: usize, startup: usize) -> Self {
        Tpe { space: space.clone(), rng: ChaCha8Rng::seed_from_u64(seed), gamma, candidates, startup, observations: Vec::new() }
    }

    /// Good and bad densities per dimension from the current observations.
    pub fn densities(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut order: Vec<usize> = (0..self.observations.len()).collect();
        order.sort_by(|&a, &b| self.observations[b].1.total_cmp(&self.observations[a].1));
        let n_good = ((self.gamma * order.len() as f64).ceil() as usize).clamp(1, order.len().max(1));
        let good: Vec<&PipelineConfig> = order[..n_good.min(order.len())].iter().map(|&i| &self.observations[i].0).collect();
        let bad: Vec<&PipelineConfig> = order[n_good.min(order.len())..].iter().map(|&i| &self.observations[i].0).collect();
        let l = value_counts(&self.space, &good).iter().map(|c| smoothed_density(c, good.len())).collect();
        let g = value_counts(&self.space, &bad).iter().map(|c| smoothed_density(c, bad.len())).collect();
        (l, g)
    }
}

impl Controller for Tpe {
    fn id(&self) -> &str {
        "tpe"
    }

    fn propose(&mut self) -> PipelineConfig {
        if self.observations.len() < self.startup {
            return uniform(&self.space, &mut self.rng);
        }
        let (l, g) = self.densities();
        let space = self.space.clone();
        let mut best: Option<(f64, PipelineConfig)> = None;
        for _ in 0..self.candidates {
            let c = draw_valid(&space, &mut self.rng, |rng| {
                let idx = l.iter().map(|p| sample_categorical(rng, p)).collect();
                PipelineConfig::from_indices(idx)
            });
            let score: f64 = c.indices().iter().enumerate().map(|(d, &i)| (l[d][i] / g[d][i]).ln()).sum();
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, c));
            }
        }
        best.expect("at least one candidate").1
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        self.observations.push((config.clone(), reward));
    }
}

/// `(1 - rate) * p + rate * elite` per entry.
pub fn cem_mix(p: &[f64], elite: &[f64], rate: f64) -> Vec<f64> {
    p.iter().zip(elite).map(|(a, b)| (1.0 - rate) * a + rate * b).collect()
}

/// Cross-entropy method over independent categorical distributions.
/// Batches of `batch` samples are evaluated; the top `elites` by reward
/// (stable in trial order) give the elite frequencies mixed into `p`.
pub struct Cem {
    space: SearchSpace,
    rng: ChaCha8Rng,
    batch: usize,
    elites: usize,
    mix: f64,
    probs: Vec<Vec<f64>>,
    results: Vec<(PipelineConfig, f64)>,
}

impl Cem {
    pub fn new(space: &SearchSpace, seed: u64, batch: usize, elites: usize, mix: f64) -> Self {
        let probs = space.dimensions().iter().map(|d| vec![1.0 / d.len() as f64; d.len()]).collect();
        Cem { space: space.clone(), rng: ChaCha8Rng::seed_from_u64(seed), batch, elites: elites.min(batch), mix, probs, results: Vec::new() }
    }

    pub fn probabilities(&self) -> &[Vec<f64>] {
        &self.probs
    }

    fn update(&mut self) {
        let mut order: Vec<usize> = (0..self.results.len()).collect();
        order.sort_by(|&a, &b| self.results[b].1.total_cmp(&self.results[a].1));
        let elite: Vec<&PipelineConfig> = order[..self.elites].iter().map(|&i| &self.results[i].0).collect();
        let counts = value_counts(&self.space, &elite);
        for (p, c) in self.probs.iter_mut().zip(counts) {
            let freq: Vec<f64> = c.iter().map(|&k| k as f64 / elite.len() as f64).collect();
            *p = cem_mix(p, &freq, self.mix);
        }
        self.results.clear();
    }
}

impl Controller for Cem {
    fn id(&self) -> &str {
        "cem"
    }

    fn propose(&mut self) -> PipelineConfig {
        let space = self.space.clone();
        let probs = self.probs.clone();
        draw_valid(&space, &mut self.rng, |rng| {
            let idx = probs.iter().map(|p| sample_categorical(rng, p)).collect();
            PipelineConfig::from_indices(idx)
        })
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        self.results.push((config.clone(), reward));
        if self.results.len() >= self.batch {
            self.update();
        }
    }
}

/// Aging evolution: uniform samples until the population is full, then
/// tournament selection and single-dimension mutation; the oldest member is
/// evicted when the population overflows.
pub struct RegularizedEvolution {
    space: SearchSpace,
    rng: ChaCha8Rng,
    capacity: usize,
    tournament: usize,
    population: VecDeque<(PipelineConfig, f64)>,
}

impl RegularizedEvolution {
    pub fn new(space: &SearchSpace, seed: u64, capacity: usize, tournament: usize) -> Self {
        RegularizedEvolution { space: space.clone(), rng: ChaCha8Rng::seed_from_u64(seed), capacity, tournament, population: VecDeque::new() }
    }

    pub fn population(&self) -> impl Iterator<Item = &(PipelineConfig, f64)> {
        self.population.iter()
    }

    /// Changes exactly one mutable dimension to a different value.
    pub fn mutate(&mut self, parent: &PipelineConfig) -> PipelineConfig {
        let space = self.space.clone();
        let mutable: Vec<usize> = (0..space.len()).filter(|&d| space.dimensions()[d].len() > 1).collect();
        if mutable.is_empty() {
            return parent.clone();
        }
        let valid_children = space.neighbors(parent);
        if valid_children.is_empty() {
            return uniform(&space, &mut self.rng);
        }
        draw_valid(&space, &mut self.rng, |rng| {
            let d = mutable[rng.random_range(0..mutable.len())];
            let mut v = rng.random_range(0..space.dimensions()[d].len() - 1);
            if v >= parent.index(d) {
                v += 1;
            }
            parent.with_index(d, v)
        })
    }
}

impl Controller for RegularizedEvolution {
    fn id(&self) -> &str {
        "reg_evo"
    }

    fn propose(&mut self) -> PipelineConfig {
        if self.population.len() < self.capacity {
            return uniform(&self.space, &mut self.rng);
        }
        let k = self.tournament.min(self.population.len());
        let picks = sample(&mut self.rng, self.population.len(), k);
        let mut best: Option<usize> = None;
        for i in picks.iter() {
            if best.is_none_or(|b| self.population[i].1 > self.population[b].1) {
                best = Some(i);
            }
        }
        let parent = self.population[best.expect("tournament is non-empty")].0.clone();
        self.mutate(&parent)
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        self.population.push_back((config.clone(), reward));
        while self.population.len() > self.capacity {
            self.population.pop_front();
        }
    }
}
