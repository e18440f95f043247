//! Tabular reward landscapes with known optima.
//!
//! The raw utility of a config is a sum of per-(dimension, value) weights
//! plus sparse pairwise interaction terms. Rewards are the raw utility
//! affinely rescaled to `[0, 1]` by the enumerated minimum and maximum, plus
//! optional Gaussian noise that is a pure function of `(noise_seed, config)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::Parallelism;
use crate::search_space::{PipelineConfig, SearchSpace, SpaceError};
use crate::text::fnv1a64;

/// Largest space that will be enumerated for rescaling or optimum search.
pub const ENUMERATION_BOUND: u128 = 1_000_000;

const RANKS_PER_TASK: u128 = 4096;

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("unary weights for `{dim}` have {found} entries, dimension has {expected} values")]
    WeightCount { dim: String, expected: usize, found: usize },
    #[error("noise_sigma must be finite and non-negative, got {0}")]
    Sigma(f64),
    #[error("space has no valid configuration")]
    EmptySpace,
    #[error("reading synthetic definition: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing synthetic definition: {0}")]
    Format(#[from] serde_json::Error),
}

/// One interaction term: adds `weight` when both assignments hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTerm {
    pub dim_a: String,
    pub value_a: String,
    pub dim_b: String,
    pub value_b: String,
    pub weight: f64,
}

/// The on-disk definition of a synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// `"default-text"`, a path to a space file, or an inline space object.
    pub space: serde_json::Value,
    /// Per-dimension weights, one per value in dimension order. Missing
    /// dimensions contribute zero.
    #[serde(default)]
    pub unary_weights: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub pairwise_terms: Vec<PairwiseTerm>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

impl SyntheticSpec {
    pub fn load(path: &Path) -> Result<SyntheticSpec, SyntheticError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Resolves the space reference; relative paths are taken from `base`.
    pub fn resolve_space(&self, base: Option<&Path>) -> Result<SearchSpace, SyntheticError> {
        match &self.space {
            serde_json::Value::String(s) if s == "default-text" => Ok(crate::search_space::default_text_space()),
            serde_json::Value::String(s) => {
                let p = Path::new(s);
                let p = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                Ok(SearchSpace::load(&p)?)
            }
            other => Ok(SearchSpace::from_json(&other.to_string())?),
        }
    }

    /// A random landscape over `space`: unary weights uniform in `[0, 1)` and
    /// `pairwise` interaction terms with weights uniform in `[-0.5, 0.5)`.
    pub fn random(space_ref: serde_json::Value, space: &SearchSpace, seed: u64, pairwise: usize, noise_sigma: f64) -> SyntheticSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unary_weights = space
            .dimensions()
            .iter()
            .map(|d| (d.name.clone(), (0..d.len()).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let mut pairwise_terms = Vec::new();
        if space.len() >= 2 {
            for _ in 0..pairwise {
                let a = rng.random_range(0..space.len());
                let mut b = rng.random_range(0..space.len() - 1);
                if b >= a {
                    b += 1;
                }
                let (da, db) = (&space.dimensions()[a], &space.dimensions()[b]);
                pairwise_terms.push(PairwiseTerm {
                    dim_a: da.name.clone(),
                    value_a: da.values[rng.random_range(0..da.len())].clone(),
                    dim_b: db.name.clone(),
                    value_b: db.values[rng.random_range(0..db.len())].clone(),
                    weight: rng.random::<f64>() - 0.5,
                });
            }
        }
        SyntheticSpec { space: space_ref, unary_weights, pairwise_terms, noise_sigma, noise_seed: seed }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    a: usize,
    va: usize,
    b: usize,
    vb: usize,
    weight: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticEnvironment {
    space: SearchSpace,
    unary: Vec<Vec<f64>>,
    pairs: Vec<Pair>,
    noise_sigma: f64,
    noise_seed: u64,
    min: f64,
    max: f64,
}

impl SyntheticEnvironment {
    pub fn from_spec(spec: &SyntheticSpec, base: Option<&Path>) -> Result<Self, SyntheticError> {
        let space = spec.resolve_space(base)?;
        Self::build(space, spec)
    }

    /// Builds over an already-resolved space (the spec's `space` field is
    /// ignored).
    pub fn build(space: SearchSpace, spec: &SyntheticSpec) -> Result<Self, SyntheticError> {
        if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
            return Err(SyntheticError::Sigma(spec.noise_sigma));
        }
        let mut unary: Vec<Vec<f64>> = space.dimensions().iter().map(|d| vec![0.0; d.len()]).collect();
        for (name, weights) in &spec.unary_weights {
            let d = space.dimension_index(name).ok_or_else(|| SpaceError::UnknownDimension(name.clone()))?;
            if weights.len() != unary[d].len() {
                return Err(SyntheticError::WeightCount {
                    dim: name.clone(),
                    expected: unary[d].len(),
                    found: weights.len(),
                });
            }
            unary[d] = weights.clone();
        }
        let lookup = |dim: &str, value: &str| -> Result<(usize, usize), SpaceError> {
            let d = space.dimension_index(dim).ok_or_else(|| SpaceError::UnknownDimension(dim.to_string()))?;
            let v = space.dimensions()[d]
                .index_of(value)
                .ok_or_else(|| SpaceError::UnknownValue { dim: dim.to_string(), value: value.to_string() })?;
            Ok((d, v))
        };
        let mut pairs = Vec::new();
        for t in &spec.pairwise_terms {
            let (a, va) = lookup(&t.dim_a, &t.value_a)?;
            let (b, vb) = lookup(&t.dim_b, &t.value_b)?;
            pairs.push(Pair { a, va, b, vb, weight: t.weight });
        }
        let mut env = SyntheticEnvironment {
            space,
            unary,
            pairs,
            noise_sigma: spec.noise_sigma,
            noise_seed: spec.noise_seed,
            min: 0.0,
            max: 0.0,
        };
        let (min, max) = env.raw_range()?;
        env.min = min;
        env.max = max;
        Ok(env)
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// SHA-256 over the space and every landscape parameter; identifies the
    /// reward function in cache keys and run metadata.
    pub fn digest(&self) -> String {
        let mut text = self.space.digest();
        for w in &self.unary {
            text.push_str(&format!("|{w:?}"));
        }
        for p in &self.pairs {
            text.push_str(&format!("|{}:{}:{}:{}:{:?}", p.a, p.va, p.b, p.vb, p.weight));
        }
        text.push_str(&format!("|{:?}|{}", self.noise_sigma, self.noise_seed));
        crate::environment::sha256_hex(text.as_bytes())
    }

    /// Same landscape standing in for a proxy of `n` items: the noise scale
    /// shrinks as `1/sqrt(n)` and the noise stream is re-keyed by `seed`.
    pub fn with_proxy(&self, n: usize, seed: u64) -> SyntheticEnvironment {
        let mut out = self.clone();
        out.noise_sigma = self.noise_sigma / (n.max(1) as f64).sqrt();
        out.noise_seed = self.noise_seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (n as u64).rotate_left(32);
        out
    }

    /// Unscaled utility.
    pub fn raw(&self, config: &PipelineConfig) -> f64 {
        let idx = config.indices();
        let mut total: f64 = self.unary.iter().zip(idx).map(|(w, &i)| w[i]).sum();
        for p in &self.pairs {
            if idx[p.a] == p.va && idx[p.b] == p.vb {
                total += p.weight;
            }
        }
        total
    }

    fn raw_range(&self) -> Result<(f64, f64), SyntheticError> {
        if self.pairs.is_empty() && self.space.constraints().is_empty() {
            let min = self.unary.iter().map(|w| w.iter().copied().fold(f64::INFINITY, f64::min)).sum();
            let max = self.unary.iter().map(|w| w.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum();
            return Ok((min, max));
        }
        let size = self.space.unconstrained_size();
        if size > ENUMERATION_BOUND {
            return Err(SpaceError::TooLarge { size, bound: ENUMERATION_BOUND }.into());
        }
        let parts = self.scan(|c| Some((self.raw(c), self.raw(c))), |a, b| (a.0.min(b.0), a.1.max(b.1)));
        parts.ok_or(SyntheticError::EmptySpace)
    }

    /// Folds `map` over all valid configs using data-parallel chunks of the
    /// rank range. `merge` must be associative and commutative.
    fn scan<T, M, G>(&self, map: M, merge: G) -> Option<T>
    where
        T: Send,
        M: Fn(&PipelineConfig) -> Option<T> + Sync + Send,
        G: Fn(T, T) -> T + Sync + Send,
    {
        let size = self.space.unconstrained_size();
        let tasks = size.div_ceil(RANKS_PER_TASK) as usize;
        let partial = Parallelism::Global.map_range(tasks, |t| {
            let start = t as u128 * RANKS_PER_TASK;
            let end = (start + RANKS_PER_TASK).min(size);
            let mut acc: Option<T> = None;
            for r in start..end {
                let c = self.space.config_at(r);
                if !self.space.is_valid(&c) {
                    continue;
                }
                if let Some(v) = map(&c) {
                    acc = Some(match acc {
                        None => v,
                        Some(a) => merge(a, v),
                    });
                }
            }
            acc
        });
        partial.into_iter().flatten().reduce(merge)
    }

    /// Noiseless reward: raw utility rescaled to `[0, 1]`. A constant
    /// landscape maps every config to 0.5.
    pub fn noiseless(&self, config: &PipelineConfig) -> f64 {
        let span = self.max - self.min;
        if span <= f64::EPSILON * self.max.abs().max(self.min.abs()).max(1.0) {
            return 0.5;
        }
        ((self.raw(config) - self.min) / span).clamp(0.0, 1.0)
    }

    fn noise(&self, config: &PipelineConfig) -> f64 {
        if self.noise_sigma == 0.0 {
            return 0.0;
        }
        let mut bytes = self.noise_seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(&self.space.canonical_key(config));
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&bytes));
        let z: f64 = StandardNormal.sample(&mut rng);
        self.noise_sigma * z
    }

    /// Reward in `[0, 1]`; repeated queries of one config agree exactly.
    pub fn reward(&self, config: &PipelineConfig) -> f64 {
        (self.noiseless(config) + self.noise(config)).clamp(0.0, 1.0)
    }

    /// Exhaustive noiseless argmax. Ties go to the lexicographically smaller
    /// canonical key.
    pub fn optimum(&self) -> Result<(PipelineConfig, f64), SyntheticError> {
        let size = self.space.unconstrained_size();
        if size > ENUMERATION_BOUND {
            return Err(SpaceError::TooLarge { size, bound: ENUMERATION_BOUND }.into());
        }
        let best = self.scan(
            |c| Some((self.noiseless(c), self.space.canonical_key(c), c.clone())),
            |a, b| {
                let a_wins = a.0 > b.0 || (a.0 == b.0 && a.1 <= b.1);
                if a_wins {
                    a
                } else {
                    b
                }
            },
        );
        best.map(|(r, _, c)| (c, r)).ok_or(SyntheticError::EmptySpace)
    }

    /// Expected noiseless reward of one uniform sample over valid configs.
    pub fn uniform_mean(&self) -> Result<f64, SyntheticError> {
        let size = self.space.unconstrained_size();
        if size > ENUMERATION_BOUND {
            return Err(SpaceError::TooLarge { size, bound: ENUMERATION_BOUND }.into());
        }
        let (sum, count) = self
            .scan(|c| Some((self.noiseless(c), 1u64)), |a, b| (a.0 + b.0, a.1 + b.1))
            .ok_or(SyntheticError::EmptySpace)?;
        Ok(sum / count as f64)
    }
}
