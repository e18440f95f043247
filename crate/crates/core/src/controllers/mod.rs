//! Search controllers behind one propose/observe contract.
//!
//! A controller is deterministic given its space, seed and the sequence of
//! observations it receives. [`Budgeted`] enforces the protocol: at most
//! `budget` proposals, and exactly one observation after each proposal.

mod bandit;
mod local;
mod population;
mod policy;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::search_space::{PipelineConfig, SearchSpace, MAX_SAMPLE_RETRIES};

pub use bandit::{ucb_score, Thompson, Ucb};
pub use local::{sa_accept_probability, Coordinate, Greedy, IteratedLocalSearch, RandomSearch, SimulatedAnnealing};
pub use policy::{dr_grpo_advantages, entropy_gradient, grpo_advantages, softmax, Grpo, ReinforcePlusPlus};
pub use population::{cem_mix, smoothed_density, Cem, RegularizedEvolution, Tpe};

pub trait Controller: Send {
    fn id(&self) -> &str;
    fn propose(&mut self) -> PipelineConfig;
    /// Called once after each proposal with the config's reward in `[0, 1]`.
    fn observe(&mut self, config: &PipelineConfig, reward: f64);
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ControllerError {
    #[error("budget of {0} proposals exhausted")]
    BudgetExhausted(usize),
    #[error("propose called before the previous proposal was observed")]
    PendingObservation,
    #[error("observe called without a pending proposal")]
    NoPendingProposal,
    #[error("observed config differs from the pending proposal")]
    ConfigMismatch,
    #[error("unknown controller `{0}`")]
    UnknownController(String),
    #[error("unknown parameter `{key}` for controller `{controller}`")]
    UnknownParam { controller: String, key: String },
    #[error("parameter `{key}` = {value} is out of range")]
    BadParam { key: String, value: f64 },
    #[error("search space has no valid configuration")]
    EmptySpace,
}

/// Named numeric hyperparameters; unspecified keys take the defaults.
pub type Params = BTreeMap<String, f64>;

/// Resolved hyperparameters handed to a controller factory.
#[derive(Debug, Clone)]
pub struct ParamSet {
    values: BTreeMap<&'static str, f64>,
}

impl ParamSet {
    pub fn get(&self, key: &str) -> f64 {
        *self.values.get(key).unwrap_or_else(|| panic!("parameter `{key}` not declared"))
    }

    pub fn count(&self, key: &str) -> usize {
        self.get(key) as usize
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ParamKind {
    /// Integer at least 1.
    Count,
    /// Real strictly above 0.
    Positive,
    /// Real at least 0.
    NonNegative,
    /// Real in `(0, 1]`.
    Fraction,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub key: &'static str,
    pub default: f64,
    pub kind: ParamKind,
}

const fn spec(key: &'static str, default: f64, kind: ParamKind) -> ParamSpec {
    ParamSpec { key, default, kind }
}

fn resolve(controller: &str, specs: &[ParamSpec], given: &Params) -> Result<ParamSet, ControllerError> {
    for key in given.keys() {
        if !specs.iter().any(|s| s.key == key) {
            return Err(ControllerError::UnknownParam { controller: controller.into(), key: key.clone() });
        }
    }
    let mut values = BTreeMap::new();
    for s in specs {
        let v = given.get(s.key).copied().unwrap_or(s.default);
        let ok = v.is_finite()
            && match s.kind {
                ParamKind::Count => v >= 1.0 && v.fract() == 0.0,
                ParamKind::Positive => v > 0.0,
                ParamKind::NonNegative => v >= 0.0,
                ParamKind::Fraction => v > 0.0 && v <= 1.0,
            };
        if !ok {
            return Err(ControllerError::BadParam { key: s.key.into(), value: v });
        }
        values.insert(s.key, v);
    }
    Ok(ParamSet { values })
}

pub type Factory = Arc<dyn Fn(&SearchSpace, u64, &ParamSet) -> Box<dyn Controller> + Send + Sync>;

#[derive(Clone)]
pub struct RegistryEntry {
    pub id: String,
    pub display_name: String,
    pub params: Vec<ParamSpec>,
    pub factory: Factory,
}

/// Controllers by id. [`Registry::builtin`] holds the thirteen built-in
/// algorithms; [`Registry::register`] adds custom ones.
#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<String, RegistryEntry>,
    order: Vec<String>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.order).finish()
    }
}

pub const BUILTIN_IDS: [&str; 13] =
    ["random", "greedy", "coordinate", "sa", "ils", "tpe", "cem", "reg_evo", "thompson", "ucb", "grpo", "dr_grpo", "reinforce_pp"];

impl Registry {
    pub fn empty() -> Self {
        Registry { entries: BTreeMap::new(), order: Vec::new() }
    }

    pub fn builtin() -> Self {
        use ParamKind::*;
        let mut r = Registry::empty();
        r.register("random", "Random", vec![], |s, seed, _| Box::new(RandomSearch::new(s, seed)));
        r.register("greedy", "Greedy", vec![], |s, seed, _| Box::new(Greedy::new(s, seed)));
        r.register("coordinate", "Coord.", vec![], |s, seed, _| Box::new(Coordinate::new(s, seed)));
        r.register("sa", "SA", vec![spec("t0", 0.1, Positive), spec("cooling", 0.95, Fraction)], |s, seed, p| {
            Box::new(SimulatedAnnealing::new(s, seed, p.get("t0"), p.get("cooling")))
        });
        r.register("ils", "ILS", vec![spec("patience", 3.0, Count), spec("perturb_dims", 2.0, Count)], |s, seed, p| {
            Box::new(IteratedLocalSearch::new(s, seed, p.count("patience"), p.count("perturb_dims")))
        });
        r.register("tpe", "TPE", vec![spec("gamma", 0.25, Fraction), spec("candidates", 10.0, Count), spec("startup", 5.0, Count)], |s, seed, p| {
            Box::new(Tpe::new(s, seed, p.get("gamma"), p.count("candidates"), p.count("startup")))
        });
        r.register("cem", "CEM", vec![spec("batch", 5.0, Count), spec("elites", 2.0, Count), spec("mix", 0.3, Fraction)], |s, seed, p| {
            Box::new(Cem::new(s, seed, p.count("batch"), p.count("elites"), p.get("mix")))
        });
        r.register("reg_evo", "Reg-Evo", vec![spec("population", 8.0, Count), spec("tournament", 3.0, Count)], |s, seed, p| {
            Box::new(RegularizedEvolution::new(s, seed, p.count("population"), p.count("tournament")))
        });
        r.register("thompson", "TS", vec![spec("prior_alpha", 1.0, Positive), spec("prior_beta", 1.0, Positive)], |s, seed, p| {
            Box::new(Thompson::new(s, seed, p.get("prior_alpha"), p.get("prior_beta")))
        });
        r.register("ucb", "UCB", vec![spec("c", std::f64::consts::SQRT_2, NonNegative)], |s, seed, p| Box::new(Ucb::new(s, seed, p.get("c"))));
        r.register("grpo", "GRPO", vec![spec("group", 5.0, Count), spec("lr", 0.5, Positive)], |s, seed, p| {
            Box::new(Grpo::new(s, seed, p.count("group"), p.get("lr"), true))
        });
        r.register("dr_grpo", "Dr. GRPO", vec![spec("group", 5.0, Count), spec("lr", 0.5, Positive)], |s, seed, p| {
            Box::new(Grpo::new(s, seed, p.count("group"), p.get("lr"), false))
        });
        r.register("reinforce_pp", "Reinforce++", vec![spec("lr", 0.5, Positive), spec("entropy", 0.01, NonNegative)], |s, seed, p| {
            Box::new(ReinforcePlusPlus::new(s, seed, p.get("lr"), p.get("entropy")))
        });
        r
    }

    /// Adds or replaces a controller.
    pub fn register<F>(&mut self, id: &str, display_name: &str, params: Vec<ParamSpec>, factory: F)
    where
        F: Fn(&SearchSpace, u64, &ParamSet) -> Box<dyn Controller> + Send + Sync + 'static,
    {
        if !self.entries.contains_key(id) {
            self.order.push(id.to_string());
        }
        self.entries.insert(
            id.to_string(),
            RegistryEntry { id: id.to_string(), display_name: display_name.to_string(), params, factory: Arc::new(factory) },
        );
    }

    /// Ids in registration order.
    pub fn ids(&self) -> Vec<&str> {
        self.order.iter().map(String::as_str).collect()
    }

    pub fn entry(&self, id: &str) -> Option<&RegistryEntry> {
        self.entries.get(id)
    }

    pub fn display_name(&self, id: &str) -> String {
        self.entries.get(id).map_or_else(|| id.to_string(), |e| e.display_name.clone())
    }

    pub fn build(&self, id: &str, space: &SearchSpace, seed: u64, params: &Params) -> Result<Box<dyn Controller>, ControllerError> {
        let entry = self.entries.get(id).ok_or_else(|| ControllerError::UnknownController(id.to_string()))?;
        let resolved = resolve(id, &entry.params, params)?;
        if space.cardinality() == 0 {
            return Err(ControllerError::EmptySpace);
        }
        Ok((entry.factory)(space, seed, &resolved))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial_index: usize,
    pub config: PipelineConfig,
    pub reward: f64,
    pub failed: bool,
}

/// Observed trials in order; indices are contiguous from 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialHistory {
    pub entries: Vec<TrialEntry>,
}

impl TrialHistory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&TrialEntry> {
        self.entries.iter().fold(None, |best: Option<&TrialEntry>, e| match best {
            Some(b) if b.reward >= e.reward => Some(b),
            _ => Some(e),
        })
    }

    /// Running maximum of rewards.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut cur = f64::NEG_INFINITY;
        self.entries
            .iter()
            .map(|e| {
                cur = cur.max(e.reward);
                cur
            })
            .collect()
    }
}

/// A controller with protocol and budget enforcement.
pub struct Budgeted {
    inner: Box<dyn Controller>,
    budget: usize,
    pending: Option<PipelineConfig>,
    history: TrialHistory,
}

impl Budgeted {
    pub fn new(inner: Box<dyn Controller>, budget: usize) -> Self {
        Budgeted { inner, budget, pending: None, history: TrialHistory::default() }
    }

    pub fn id(&self) -> &str {
        self.inner.id()
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.history.len() - usize::from(self.pending.is_some())
    }

    pub fn history(&self) -> &TrialHistory {
        &self.history
    }

    pub fn propose(&mut self) -> Result<PipelineConfig, ControllerError> {
        if self.pending.is_some() {
            return Err(ControllerError::PendingObservation);
        }
        if self.history.len() >= self.budget {
            return Err(ControllerError::BudgetExhausted(self.budget));
        }
        let c = self.inner.propose();
        self.pending = Some(c.clone());
        Ok(c)
    }

    pub fn observe(&mut self, config: &PipelineConfig, reward: f64, failed: bool) -> Result<(), ControllerError> {
        let pending = self.pending.as_ref().ok_or(ControllerError::NoPendingProposal)?;
        if pending != config {
            return Err(ControllerError::ConfigMismatch);
        }
        let reward = if reward.is_finite() { reward.clamp(0.0, 1.0) } else { 0.0 };
        self.inner.observe(config, reward);
        self.history.entries.push(TrialEntry { trial_index: self.history.len(), config: config.clone(), reward, failed });
        self.pending = None;
        Ok(())
    }
}

/// Draws from `draw` until the result satisfies the space's constraints,
/// falling back to a uniform sample.
pub(crate) fn draw_valid<R: Rng>(space: &SearchSpace, rng: &mut R, mut draw: impl FnMut(&mut R) -> PipelineConfig) -> PipelineConfig {
    for _ in 0..MAX_SAMPLE_RETRIES {
        let c = draw(rng);
        if space.is_valid(&c) {
            return c;
        }
    }
    uniform(space, rng)
}

pub(crate) fn uniform<R: Rng>(space: &SearchSpace, rng: &mut R) -> PipelineConfig {
    match space.sample_uniform(rng) {
        Ok(c) => c,
        // Rejection sampling can miss in heavily constrained spaces; any valid
        // config keeps the run going.
        Err(_) => space.enumerate().next().expect("controllers are only built over satisfiable spaces"),
    }
}

/// Per-dimension argmax of `scores` (ties to the lower index). If that
/// combination violates a constraint, the best-scoring valid single-value
/// change is used, then a uniform sample.
pub(crate) fn argmax_valid<R: Rng>(space: &SearchSpace, rng: &mut R, scores: &[Vec<f64>]) -> PipelineConfig {
    let pick: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let c = PipelineConfig::from_indices(pick);
    if space.is_valid(&c) {
        return c;
    }
    let total = |c: &PipelineConfig| -> f64 { c.indices().iter().zip(scores).map(|(&i, s)| s[i]).sum() };
    let mut best: Option<(f64, PipelineConfig)> = None;
    for n in space.neighbors(&c) {
        let t = total(&n);
        if best.as_ref().is_none_or(|(b, _)| t > *b) {
            best = Some((t, n));
        }
    }
    best.map(|(_, n)| n).unwrap_or_else(|| uniform(space, rng))
}

/// Index of the maximum; ties go to the lower index, NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests;
