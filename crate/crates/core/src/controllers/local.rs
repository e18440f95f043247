//! Uninformed and local-search controllers.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{draw_valid, uniform, Controller};
use crate::search_space::{PipelineConfig, SearchSpace};

/// Independent uniform samples; observations are ignored.
pub struct RandomSearch {
    space: SearchSpace,
    rng: ChaCha8Rng,
}

impl RandomSearch {
    pub fn new(space: &SearchSpace, seed: u64) -> Self {
        RandomSearch { space: space.clone(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Controller for RandomSearch {
    fn id(&self) -> &str {
        "random"
    }

    fn propose(&mut self) -> PipelineConfig {
        uniform(&self.space, &mut self.rng)
    }

    fn observe(&mut self, _: &PipelineConfig, _: f64) {}
}

/// First-improvement hill climbing over Hamming-1 neighbours.
///
/// Neighbours are scanned in dimension-then-value order with a cursor that
/// persists across moves, so one pass over all positions costs
/// `sum(|values| - 1)` proposals. Already-evaluated neighbours are judged by
/// their known reward without spending a proposal. A full pass without
/// improvement triggers a random restart.
pub struct Greedy {
    space: SearchSpace,
    rng: ChaCha8Rng,
    center: Option<(PipelineConfig, f64)>,
    /// Last scanned (dimension, value) position.
    cursor: (usize, usize),
    since_move: usize,
    restarting: bool,
    seen: HashMap<PipelineConfig, f64>,
}

impl Greedy {
    pub fn new(space: &SearchSpace, seed: u64) -> Self {
        let last = space.len().saturating_sub(1);
        let last_v = space.dimensions().last().map_or(0, |d| d.len() - 1);
        Greedy {
            space: space.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            center: None,
            cursor: (last, last_v),
            since_move: 0,
            restarting: false,
            seen: HashMap::new(),
        }
    }

    fn positions(&self) -> usize {
        self.space.dimensions().iter().map(|d| d.len()).sum()
    }

    fn advance(&mut self) -> (usize, usize) {
        let (mut d, mut v) = self.cursor;
        v += 1;
        while v >= self.space.dimensions()[d].len() {
            d = (d + 1) % self.space.len();
            v = 0;
        }
        self.cursor = (d, v);
        self.cursor
    }
}

impl Controller for Greedy {
    fn id(&self) -> &str {
        "greedy"
    }

    fn propose(&mut self) -> PipelineConfig {
        loop {
            let Some((center, center_r)) = self.center.clone() else {
                return uniform(&self.space, &mut self.rng);
            };
            if self.restarting || self.space.is_empty() {
                self.restarting = true;
                return uniform(&self.space, &mut self.rng);
            }
            if self.since_move >= self.positions() {
                self.restarting = true;
                continue;
            }
            let (d, v) = self.advance();
            self.since_move += 1;
            if v == center.index(d) {
                continue;
            }
            let n = center.with_index(d, v);
            if !self.space.is_valid(&n) {
                continue;
            }
            match self.seen.get(&n) {
                Some(&r) => {
                    if r > center_r {
                        self.center = Some((n, r));
                        self.since_move = 0;
                    }
                }
                None => return n,
            }
        }
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        self.seen.insert(config.clone(), reward);
        let moved = match &self.center {
            None => true,
            Some(_) if self.restarting => true,
            Some((_, r)) => reward > *r,
        };
        if moved {
            self.center = Some((config.clone(), reward));
            self.since_move = 0;
            self.restarting = false;
        }
    }
}

/// Cyclic coordinate descent: sweep every alternative value of one
/// dimension, keep the best (ties to the lower value index), move on.
pub struct Coordinate {
    space: SearchSpace,
    rng: ChaCha8Rng,
    center: Option<(PipelineConfig, f64)>,
    dim: usize,
    queue: Vec<usize>,
    sweep: Vec<(usize, f64)>,
}

impl Coordinate {
    pub fn new(space: &SearchSpace, seed: u64) -> Self {
        Coordinate { space: space.clone(), rng: ChaCha8Rng::seed_from_u64(seed), center: None, dim: 0, queue: Vec::new(), sweep: Vec::new() }
    }

    /// Fills the queue for the next dimension that has a valid alternative.
    fn start_sweep(&mut self, center: &PipelineConfig) -> bool {
        for step in 0..self.space.len() {
            let d = (self.dim + step) % self.space.len();
            let values: Vec<usize> = (0..self.space.dimensions()[d].len())
                .filter(|&v| v != center.index(d) && self.space.is_valid(&center.with_index(d, v)))
                .collect();
            if !values.is_empty() {
                self.dim = d;
                self.queue = values;
                self.queue.reverse();
                return true;
            }
        }
        false
    }
}

impl Controller for Coordinate {
    fn id(&self) -> &str {
        "coordinate"
    }

    fn propose(&mut self) -> PipelineConfig {
        let Some((center, _)) = self.center.clone() else {
            return uniform(&self.space, &mut self.rng);
        };
        if self.queue.is_empty() && !self.start_sweep(&center) {
            return center;
        }
        center.with_index(self.dim, *self.queue.last().expect("queue is non-empty"))
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        let Some((center, center_r)) = self.center.clone() else {
            self.center = Some((config.clone(), reward));
            return;
        };
        let Some(&v) = self.queue.last() else { return };
        if *config != center.with_index(self.dim, v) {
            return;
        }
        self.queue.pop();
        self.sweep.push((v, reward));
        if self.queue.is_empty() {
            let mut best = (center.index(self.dim), center_r);
            for &(v, r) in &self.sweep {
                if r > best.1 || (r == best.1 && v < best.0) {
                    best = (v, r);
                }
            }
            self.center = Some((center.with_index(self.dim, best.0), best.1));
            self.sweep.clear();
            self.dim = (self.dim + 1) % self.space.len();
        }
    }
}

/// Metropolis acceptance probability for a reward change `delta`.
pub fn sa_accept_probability(delta: f64, temperature: f64) -> f64 {
    if delta >= 0.0 {
        1.0
    } else if temperature <= 0.0 {
        0.0
    } else {
        (delta / temperature).exp()
    }
}

fn random_neighbor(space: &SearchSpace, rng: &mut ChaCha8Rng, c: &PipelineConfig) -> PipelineConfig {
    space.neighbors(c).choose(rng).cloned().unwrap_or_else(|| uniform(space, rng))
}

/// Simulated annealing over uniform single-dimension moves with geometric
/// cooling after every observation.
pub struct SimulatedAnnealing {
    space: SearchSpace,
    rng: ChaCha8Rng,
    current: Option<(PipelineConfig, f64)>,
    temperature: f64,
    cooling: f64,
}

impl SimulatedAnnealing {
    pub fn new(space: &SearchSpace, seed: u64, t0: f64, cooling: f64) -> Self {
        SimulatedAnnealing { space: space.clone(), rng: ChaCha8Rng::seed_from_u64(seed), current: None, temperature: t0, cooling }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl Controller for SimulatedAnnealing {
    fn id(&self) -> &str {
        "sa"
    }

    fn propose(&mut self) -> PipelineConfig {
        match &self.current {
            None => uniform(&self.space, &mut self.rng),
            Some((c, _)) => random_neighbor(&self.space, &mut self.rng, &c.clone()),
        }
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        let accept = match &self.current {
            None => true,
            Some((_, r)) => {
                let p = sa_accept_probability(reward - r, self.temperature);
                p >= 1.0 || self.rng.random::<f64>() < p
            }
        };
        if accept {
            self.current = Some((config.clone(), reward));
        }
        self.temperature *= self.cooling;
    }
}

/// Local improvement by random unevaluated neighbours; after `patience`
/// consecutive non-improving trials the best-so-far config is perturbed by
/// resampling `perturb_dims` distinct dimensions, and the search continues
/// from the perturbed point.
pub struct IteratedLocalSearch {
    space: SearchSpace,
    rng: ChaCha8Rng,
    patience: usize,
    perturb_dims: usize,
    best: Option<(PipelineConfig, f64)>,
    center: Option<(PipelineConfig, f64)>,
    misses: usize,
    perturbing: bool,
    seen: HashMap<PipelineConfig, f64>,
}

impl IteratedLocalSearch {
    pub fn new(space: &SearchSpace, seed: u64, patience: usize, perturb_dims: usize) -> Self {
        IteratedLocalSearch {
            space: space.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            patience,
            perturb_dims,
            best: None,
            center: None,
            misses: 0,
            perturbing: false,
            seen: HashMap::new(),
        }
    }

    fn perturb(&mut self, base: &PipelineConfig) -> PipelineConfig {
        let k = self.perturb_dims.min(self.space.len());
        let space = self.space.clone();
        draw_valid(&space, &mut self.rng, |rng| {
            let mut dims: Vec<usize> = (0..space.len()).collect();
            dims.shuffle(rng);
            let mut c = base.clone();
            for &d in &dims[..k] {
                c = c.with_index(d, rng.random_range(0..space.dimensions()[d].len()));
            }
            c
        })
    }
}

impl Controller for IteratedLocalSearch {
    fn id(&self) -> &str {
        "ils"
    }

    fn propose(&mut self) -> PipelineConfig {
        let Some((center, _)) = self.center.clone() else {
            return uniform(&self.space, &mut self.rng);
        };
        if self.misses >= self.patience {
            let (best, _) = self.best.clone().expect("best exists once a center does");
            self.perturbing = true;
            self.misses = 0;
            return self.perturb(&best);
        }
        let all = self.space.neighbors(&center);
        let fresh: Vec<&PipelineConfig> = all.iter().filter(|n| !self.seen.contains_key(*n)).collect();
        match fresh.choose(&mut self.rng) {
            Some(n) => (*n).clone(),
            None => all.choose(&mut self.rng).cloned().unwrap_or_else(|| uniform(&self.space, &mut self.rng)),
        }
    }

    fn observe(&mut self, config: &PipelineConfig, reward: f64) {
        self.seen.insert(config.clone(), reward);
        if self.best.as_ref().is_none_or(|(_, b)| reward > *b) {
            self.best = Some((config.clone(), reward));
        }
        match &self.center {
            None => self.center = Some((config.clone(), reward)),
            Some(_) if self.perturbing => {
                self.center = Some((config.clone(), reward));
                self.perturbing = false;
            }
            Some((_, r)) if reward > *r => {
                self.center = Some((config.clone(), reward));
                self.misses = 0;
            }
            Some(_) => self.misses += 1,
        }
    }
}
