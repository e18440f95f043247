//! The discrete configuration space and points in it.
//!
//! A [`SearchSpace`] is an ordered list of categorical [`Dimension`]s plus a
//! list of validity [`Constraint`]s. A [`PipelineConfig`] stores one value
//! index per dimension, aligned with the owning space's dimension order; it
//! only has meaning together with that space.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Upper bound on rejection-sampling attempts in [`SearchSpace::sample_uniform`].
pub const MAX_SAMPLE_RETRIES: usize = 1000;

/// Current version of the space definition file format.
pub const SPACE_FILE_VERSION: u32 = 1;

/// Label used by optional modules for their disabled setting.
pub const OFF: &str = "off";

#[derive(Debug, thiserror::Error)]
pub enum SpaceError {
    #[error("dimension `{0}` has no values")]
    EmptyDimension(String),
    #[error("dimension `{dim}` lists value `{value}` more than once")]
    DuplicateValue { dim: String, value: String },
    #[error("dimension name `{0}` is used more than once")]
    DuplicateName(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("dimension `{dim}` has no value `{value}`")]
    UnknownValue { dim: String, value: String },
    #[error("constraint on `{dim}` needs numeric labels, found `{value}`")]
    NonNumericLabel { dim: String, value: String },
    #[error("no valid configuration found after {0} sampling attempts")]
    Unsatisfiable(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed configuration key: {0}")]
    BadKey(String),
    #[error("unsupported space file version {0}")]
    Version(u32),
    #[error("space has {size} configurations, above the enumeration bound {bound}")]
    TooLarge { size: u128, bound: u128 },
    #[error("reading space file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing space file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Pipeline stage a dimension belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleTag {
    Rewriter,
    Chunker,
    Retriever,
    Reranker,
    Pruner,
    Generator,
}

impl ModuleTag {
    pub const ALL: [ModuleTag; 6] = [
        ModuleTag::Rewriter,
        ModuleTag::Chunker,
        ModuleTag::Retriever,
        ModuleTag::Reranker,
        ModuleTag::Pruner,
        ModuleTag::Generator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleTag::Rewriter => "rewriter",
            ModuleTag::Chunker => "chunker",
            ModuleTag::Retriever => "retriever",
            ModuleTag::Reranker => "reranker",
            ModuleTag::Pruner => "pruner",
            ModuleTag::Generator => "generator",
        }
    }
}

impl fmt::Display for ModuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModuleTag {
    type Err = SpaceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModuleTag::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SpaceError::InvalidConfig(format!("unknown module tag `{s}`")))
    }
}

/// One categorical hyperparameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub module_tag: ModuleTag,
    pub values: Vec<String>,
}

impl Dimension {
    pub fn new<S: Into<String>>(name: &str, module_tag: ModuleTag, values: impl IntoIterator<Item = S>) -> Self {
        Dimension {
            name: name.to_string(),
            module_tag,
            values: values.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.values.iter().position(|v| v == label)
    }
}

/// Validity predicate over assignments, referenced by name in space files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum Constraint {
    /// Numeric value of `left` must be strictly below that of `right`.
    LessThan { left: String, right: String },
}

#[derive(Debug, Clone)]
struct CompiledConstraint {
    left: usize,
    right: usize,
    /// allowed[left_index][right_index]
    allowed: Vec<Vec<bool>>,
}

/// The discrete configuration space.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    dimensions: Vec<Dimension>,
    constraints: Vec<Constraint>,
    by_name: HashMap<String, usize>,
    compiled: Vec<CompiledConstraint>,
}

impl PartialEq for SearchSpace {
    fn eq(&self, other: &Self) -> bool {
        self.dimensions == other.dimensions && self.constraints == other.constraints
    }
}

/// A point in a [`SearchSpace`]: one value index per dimension, in the
/// space's dimension order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PipelineConfig {
    indices: Vec<usize>,
}

impl PipelineConfig {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn index(&self, dim: usize) -> usize {
        self.indices[dim]
    }

    /// Number of dimensions on which two configs differ.
    pub fn hamming(&self, other: &PipelineConfig) -> usize {
        self.indices.iter().zip(&other.indices).filter(|(a, b)| a != b).count()
    }

    /// Wraps raw indices without validation.
    pub(crate) fn from_indices(indices: Vec<usize>) -> PipelineConfig {
        PipelineConfig { indices }
    }

    /// Copy with one dimension changed. The result is not validated.
    pub(crate) fn with_index(&self, dim: usize, value: usize) -> PipelineConfig {
        let mut indices = self.indices.clone();
        indices[dim] = value;
        PipelineConfig { indices }
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    version: u32,
    dimensions: Vec<Dimension>,
    #[serde(default)]
    constraints: Vec<Constraint>,
}

fn parse_number(dim: &Dimension, label: &str) -> Result<f64, SpaceError> {
    label.parse::<f64>().map_err(|_| SpaceError::NonNumericLabel {
        dim: dim.name.clone(),
        value: label.to_string(),
    })
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>, constraints: Vec<Constraint>) -> Result<Self, SpaceError> {
        let mut by_name = HashMap::new();
        for (i, dim) in dimensions.iter().enumerate() {
            if dim.values.is_empty() {
                return Err(SpaceError::EmptyDimension(dim.name.clone()));
            }
            let mut seen = HashSet::new();
            for v in &dim.values {
                if !seen.insert(v.as_str()) {
                    return Err(SpaceError::DuplicateValue { dim: dim.name.clone(), value: v.clone() });
                }
            }
            if by_name.insert(dim.name.clone(), i).is_some() {
                return Err(SpaceError::DuplicateName(dim.name.clone()));
            }
        }
        let mut compiled = Vec::with_capacity(constraints.len());
        for c in &constraints {
            match c {
                Constraint::LessThan { left, right } => {
                    let l = *by_name.get(left).ok_or_else(|| SpaceError::UnknownDimension(left.clone()))?;
                    let r = *by_name.get(right).ok_or_else(|| SpaceError::UnknownDimension(right.clone()))?;
                    let lv = dimensions[l]
                        .values
                        .iter()
                        .map(|v| parse_number(&dimensions[l], v))
                        .collect::<Result<Vec<_>, _>>()?;
                    let rv = dimensions[r]
                        .values
                        .iter()
                        .map(|v| parse_number(&dimensions[r], v))
                        .collect::<Result<Vec<_>, _>>()?;
                    let allowed = lv.iter().map(|a| rv.iter().map(|b| a < b).collect()).collect();
                    compiled.push(CompiledConstraint { left: l, right: r, allowed });
                }
            }
        }
        Ok(SearchSpace { dimensions, constraints, by_name, compiled })
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn dimension(&self, name: &str) -> Option<&Dimension> {
        self.dimension_index(name).map(|i| &self.dimensions[i])
    }

    /// Label assigned to `name` in `config`, if the space has that dimension.
    pub fn label<'a>(&'a self, config: &PipelineConfig, name: &str) -> Option<&'a str> {
        let d = self.dimension_index(name)?;
        self.dimensions[d].values.get(config.indices[d]).map(String::as_str)
    }

    /// Product of value counts, ignoring constraints.
    pub fn unconstrained_size(&self) -> u128 {
        self.dimensions.iter().map(|d| d.len() as u128).product()
    }

    /// Exact number of configurations that satisfy every constraint.
    ///
    /// Only the dimensions that appear in some constraint are enumerated; the
    /// rest contribute their value counts as a plain product.
    pub fn cardinality(&self) -> u128 {
        if self.compiled.is_empty() {
            return self.unconstrained_size();
        }
        let mut involved: Vec<usize> =
            self.compiled.iter().flat_map(|c| [c.left, c.right]).collect();
        involved.sort_unstable();
        involved.dedup();
        let free: u128 = (0..self.len())
            .filter(|d| !involved.contains(d))
            .map(|d| self.dimensions[d].len() as u128)
            .product();
        let mut counter = vec![0usize; self.len()];
        let mut valid: u128 = 0;
        loop {
            if self.compiled.iter().all(|c| c.allowed[counter[c.left]][counter[c.right]]) {
                valid += 1;
            }
            // odometer over the involved dimensions only
            let mut pos = involved.len();
            loop {
                if pos == 0 {
                    return valid * free;
                }
                pos -= 1;
                let d = involved[pos];
                counter[d] += 1;
                if counter[d] < self.dimensions[d].len() {
                    break;
                }
                counter[d] = 0;
            }
        }
    }

    /// Checks that `config` has the right shape, in-range indices, and passes
    /// every constraint.
    pub fn validate(&self, config: &PipelineConfig) -> Result<(), SpaceError> {
        if config.indices.len() != self.dimensions.len() {
            return Err(SpaceError::InvalidConfig(format!(
                "expected {} dimensions, got {}",
                self.dimensions.len(),
                config.indices.len()
            )));
        }
        for (d, (&i, dim)) in config.indices.iter().zip(&self.dimensions).enumerate() {
            if i >= dim.len() {
                return Err(SpaceError::InvalidConfig(format!(
                    "index {i} out of range for dimension {d} `{}`",
                    dim.name
                )));
            }
        }
        for (c, spec) in self.compiled.iter().zip(&self.constraints) {
            if !c.allowed[config.indices[c.left]][config.indices[c.right]] {
                return Err(SpaceError::InvalidConfig(format!("constraint {spec:?} violated")));
            }
        }
        Ok(())
    }

    pub fn is_valid(&self, config: &PipelineConfig) -> bool {
        self.validate(config).is_ok()
    }

    /// Builds a config from raw indices, validating it.
    pub fn config(&self, indices: Vec<usize>) -> Result<PipelineConfig, SpaceError> {
        let c = PipelineConfig { indices };
        self.validate(&c)?;
        Ok(c)
    }

    /// Builds a config from `(dimension name, value label)` pairs given in any
    /// order. Every dimension must be assigned exactly once.
    pub fn config_from_labels<K, V>(&self, pairs: impl IntoIterator<Item = (K, V)>) -> Result<PipelineConfig, SpaceError>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut indices: Vec<Option<usize>> = vec![None; self.len()];
        for (k, v) in pairs {
            let (k, v) = (k.as_ref(), v.as_ref());
            let d = self.dimension_index(k).ok_or_else(|| SpaceError::UnknownDimension(k.to_string()))?;
            if indices[d].is_some() {
                return Err(SpaceError::InvalidConfig(format!("dimension `{k}` assigned twice")));
            }
            let i = self.dimensions[d]
                .index_of(v)
                .ok_or_else(|| SpaceError::UnknownValue { dim: k.to_string(), value: v.to_string() })?;
            indices[d] = Some(i);
        }
        let indices = indices
            .into_iter()
            .enumerate()
            .map(|(d, i)| {
                i.ok_or_else(|| SpaceError::InvalidConfig(format!("dimension `{}` unassigned", self.dimensions[d].name)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.config(indices)
    }

    /// `(dimension name, label)` pairs in dimension order.
    pub fn labels<'a>(&'a self, config: &PipelineConfig) -> Vec<(&'a str, &'a str)> {
        self.dimensions
            .iter()
            .zip(&config.indices)
            .map(|(d, &i)| (d.name.as_str(), d.values[i].as_str()))
            .collect()
    }

    /// Serialization of the config's `(name, label)` pairs sorted by name.
    /// Equal configs give equal keys; distinct configs give distinct keys.
    pub fn canonical_key(&self, config: &PipelineConfig) -> Vec<u8> {
        let sorted: BTreeMap<&str, &str> = self.labels(config).into_iter().collect();
        serde_json::to_vec(&sorted).expect("string map always serializes")
    }

    /// Inverse of [`canonical_key`](Self::canonical_key).
    pub fn parse_key(&self, key: &[u8]) -> Result<PipelineConfig, SpaceError> {
        let map: BTreeMap<String, String> =
            serde_json::from_slice(key).map_err(|e| SpaceError::BadKey(e.to_string()))?;
        self.config_from_labels(map)
    }

    /// Decodes a mixed-radix rank in `0..unconstrained_size()` into indices
    /// (last dimension varies fastest). The result may violate constraints.
    pub fn config_at(&self, mut rank: u128) -> PipelineConfig {
        let mut indices = vec![0; self.len()];
        for d in (0..self.len()).rev() {
            let n = self.dimensions[d].len() as u128;
            indices[d] = (rank % n) as usize;
            rank /= n;
        }
        PipelineConfig { indices }
    }

    /// Every valid configuration, in mixed-radix order.
    pub fn enumerate(&self) -> impl Iterator<Item = PipelineConfig> + '_ {
        let total = self.unconstrained_size();
        (0..total).map(move |r| self.config_at(r)).filter(move |c| self.is_valid(c))
    }

    /// Enumerates the space after checking it against `bound`.
    pub fn enumerate_bounded(&self, bound: u128) -> Result<impl Iterator<Item = PipelineConfig> + '_, SpaceError> {
        let size = self.unconstrained_size();
        if size > bound {
            return Err(SpaceError::TooLarge { size, bound });
        }
        Ok(self.enumerate())
    }

    /// Draws each dimension independently and uniformly, rejecting
    /// assignments that violate a constraint.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PipelineConfig, SpaceError> {
        for _ in 0..MAX_SAMPLE_RETRIES {
            let indices = self.dimensions.iter().map(|d| rng.random_range(0..d.len())).collect();
            let c = PipelineConfig { indices };
            if self.is_valid(&c) {
                return Ok(c);
            }
        }
        Err(SpaceError::Unsatisfiable(MAX_SAMPLE_RETRIES))
    }

    /// All valid configs at Hamming distance one, in dimension order then
    /// value order.
    pub fn neighbors(&self, config: &PipelineConfig) -> Vec<PipelineConfig> {
        let mut out = Vec::new();
        for (d, dim) in self.dimensions.iter().enumerate() {
            for v in 0..dim.len() {
                if v == config.indices[d] {
                    continue;
                }
                let n = config.with_index(d, v);
                if self.is_valid(&n) {
                    out.push(n);
                }
            }
        }
        out
    }

    /// Copy of the space with one dimension's value list replaced.
    pub fn with_values(&self, name: &str, values: Vec<String>) -> Result<SearchSpace, SpaceError> {
        let d = self.dimension_index(name).ok_or_else(|| SpaceError::UnknownDimension(name.to_string()))?;
        let mut dims = self.dimensions.clone();
        dims[d].values = values;
        SearchSpace::new(dims, self.constraints.clone())
    }

    /// Re-expresses a config of `self` in `other` by matching labels.
    pub fn translate(&self, config: &PipelineConfig, other: &SearchSpace) -> Result<PipelineConfig, SpaceError> {
        other.config_from_labels(self.labels(config))
    }

    pub fn to_json(&self) -> String {
        let file = SpaceFile {
            version: SPACE_FILE_VERSION,
            dimensions: self.dimensions.clone(),
            constraints: self.constraints.clone(),
        };
        serde_json::to_string_pretty(&file).expect("space always serializes")
    }

    pub fn from_json(text: &str) -> Result<SearchSpace, SpaceError> {
        let file: SpaceFile = serde_json::from_str(text)?;
        if file.version != SPACE_FILE_VERSION {
            return Err(SpaceError::Version(file.version));
        }
        SearchSpace::new(file.dimensions, file.constraints)
    }

    pub fn load(path: &Path) -> Result<SearchSpace, SpaceError> {
        SearchSpace::from_json(&std::fs::read_to_string(path)?)
    }

    /// `default-text` or a path to a space definition file.
    pub fn resolve(spec: &str) -> Result<SearchSpace, SpaceError> {
        if spec == "default-text" {
            Ok(default_text_space())
        } else {
            SearchSpace::load(Path::new(spec))
        }
    }

    /// Hex SHA-256 of the serialized definition.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Dimension names used by the text pipeline.
pub mod dims {
    pub const REWRITER_PROMPT: &str = "rewriter_prompt";
    pub const CHUNK_SIZE: &str = "chunk_size";
    pub const CHUNK_OVERLAP: &str = "chunk_overlap";
    pub const RETRIEVER_EMBEDDER: &str = "retriever_embedder";
    pub const RETRIEVER_TOP_K: &str = "retriever_top_k";
    pub const BM25_WEIGHT_ALPHA: &str = "bm25_weight_alpha";
    pub const RERANKER_MODEL: &str = "reranker_model";
    pub const RERANKER_TOP_K: &str = "reranker_top_k";
    pub const PRUNER_PROMPT: &str = "pruner_prompt";
}

/// The nine-dimension text pipeline space.
pub fn default_text_space() -> SearchSpace {
    use dims::*;
    let top_k = ["1", "3", "5", "10", "20", "50"];
    let dimensions = vec![
        Dimension::new(REWRITER_PROMPT, ModuleTag::Rewriter, [OFF, "P1", "P2", "P3"]),
        Dimension::new(CHUNK_SIZE, ModuleTag::Chunker, ["256", "512", "1024", "2048"]),
        Dimension::new(CHUNK_OVERLAP, ModuleTag::Chunker, ["0", "64", "128", "192"]),
        Dimension::new(RETRIEVER_EMBEDDER, ModuleTag::Retriever, ["emb-a", "emb-b"]),
        Dimension::new(RETRIEVER_TOP_K, ModuleTag::Retriever, top_k),
        Dimension::new(BM25_WEIGHT_ALPHA, ModuleTag::Retriever, ["0.0", "0.25", "0.5", "0.75", "1.0"]),
        Dimension::new(RERANKER_MODEL, ModuleTag::Reranker, [OFF, "rr-a", "rr-b"]),
        Dimension::new(RERANKER_TOP_K, ModuleTag::Reranker, top_k),
        Dimension::new(PRUNER_PROMPT, ModuleTag::Pruner, [OFF, "P1", "P2", "P3"]),
    ];
    let constraints = vec![Constraint::LessThan {
        left: CHUNK_OVERLAP.to_string(),
        right: CHUNK_SIZE.to_string(),
    }];
    SearchSpace::new(dimensions, constraints).expect("default space is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(sizes: &[usize]) -> SearchSpace {
        let dims = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| Dimension::new(&format!("d{i}"), ModuleTag::Retriever, (0..n).map(|v| v.to_string())))
            .collect();
        SearchSpace::new(dims, vec![]).unwrap()
    }

    #[test]
    fn default_space_shape() {
        let s = default_text_space();
        assert_eq!(s.len(), 9);
        assert_eq!(s.dimension("chunk_size").unwrap().values, ["256", "512", "1024", "2048"]);
        assert_eq!(s.dimension("retriever_top_k").unwrap().values, ["1", "3", "5", "10", "20", "50"]);
        assert_eq!(s.dimension("bm25_weight_alpha").unwrap().values, ["0.0", "0.25", "0.5", "0.75", "1.0"]);
    }

    #[test]
    fn default_space_cardinality_matches_enumeration() {
        let s = default_text_space();
        let product: u128 = [4u128, 4, 4, 2, 6, 5, 3, 6, 4].iter().product();
        assert_eq!(product, 276_480);
        assert_eq!(s.unconstrained_size(), product);
        assert_eq!(s.cardinality(), product);
        assert_eq!(s.enumerate().count() as u128, product);
    }

    #[test]
    fn constraint_counts_only_valid_assignments() {
        let dims = vec![
            Dimension::new("size", ModuleTag::Chunker, ["4", "8"]),
            Dimension::new("overlap", ModuleTag::Chunker, ["0", "4", "6"]),
            Dimension::new("other", ModuleTag::Retriever, ["x", "y", "z"]),
        ];
        let s = SearchSpace::new(
            dims,
            vec![Constraint::LessThan { left: "overlap".into(), right: "size".into() }],
        )
        .unwrap();
        // valid (size, overlap): (4,0), (8,0), (8,4), (8,6)
        assert_eq!(s.cardinality(), 4 * 3);
        assert_eq!(s.enumerate().count(), 12);
        let bad = s.config_from_labels([("size", "4"), ("overlap", "4"), ("other", "x")]);
        assert!(matches!(bad, Err(SpaceError::InvalidConfig(_))));
    }

    #[test]
    fn construction_rejects_malformed_dimensions() {
        let e = SearchSpace::new(vec![Dimension::new("a", ModuleTag::Pruner, Vec::<String>::new())], vec![]);
        assert!(matches!(e, Err(SpaceError::EmptyDimension(_))));
        let e = SearchSpace::new(vec![Dimension::new("a", ModuleTag::Pruner, ["x", "x"])], vec![]);
        assert!(matches!(e, Err(SpaceError::DuplicateValue { .. })));
        let e = SearchSpace::new(
            vec![Dimension::new("a", ModuleTag::Pruner, ["x"]), Dimension::new("a", ModuleTag::Pruner, ["y"])],
            vec![],
        );
        assert!(matches!(e, Err(SpaceError::DuplicateName(_))));
        let e = SearchSpace::new(
            vec![Dimension::new("a", ModuleTag::Pruner, ["x"]), Dimension::new("b", ModuleTag::Pruner, ["1"])],
            vec![Constraint::LessThan { left: "a".into(), right: "b".into() }],
        );
        assert!(matches!(e, Err(SpaceError::NonNumericLabel { .. })));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let s = default_text_space();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| s.sample_uniform(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn degenerate_space_samples_its_only_config() {
        let s = small(&[1, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(s.sample_uniform(&mut rng).unwrap().indices(), &[0, 0, 0]);
        assert!(s.neighbors(&s.config(vec![0, 0, 0]).unwrap()).is_empty());
    }

    #[test]
    fn sampling_frequency_of_binary_dimension() {
        let s = small(&[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let ones = (0..10_000).filter(|_| s.sample_uniform(&mut rng).unwrap().index(0) == 1).count();
        let f = ones as f64 / 10_000.0;
        assert!((0.45..=0.55).contains(&f), "frequency {f}");
    }

    #[test]
    fn unsatisfiable_space_errors() {
        let dims = vec![
            Dimension::new("size", ModuleTag::Chunker, ["4"]),
            Dimension::new("overlap", ModuleTag::Chunker, ["8"]),
        ];
        let s = SearchSpace::new(dims, vec![Constraint::LessThan { left: "overlap".into(), right: "size".into() }])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(s.sample_uniform(&mut rng), Err(SpaceError::Unsatisfiable(_))));
        assert_eq!(s.cardinality(), 0);
    }

    #[test]
    fn neighbor_count_is_sum_of_alternatives() {
        let s = small(&[4, 4, 6]);
        for c in s.enumerate() {
            let n = s.neighbors(&c);
            assert_eq!(n.len(), 3 + 3 + 5);
            assert!(n.iter().all(|x| x.hamming(&c) == 1));
            let uniq: HashSet<_> = n.iter().collect();
            assert_eq!(uniq.len(), n.len());
        }
    }

    #[test]
    fn neighbors_are_symmetric() {
        let s = small(&[3, 2, 4]);
        let all: Vec<_> = s.enumerate().collect();
        for a in &all {
            for b in &all {
                assert_eq!(s.neighbors(a).contains(b), s.neighbors(b).contains(a));
            }
        }
    }

    #[test]
    fn keys_ignore_construction_order() {
        let s = default_text_space();
        let mut pairs: Vec<(String, String)> = s
            .dimensions()
            .iter()
            .map(|d| (d.name.clone(), d.values[d.len() - 1].clone()))
            .collect();
        let a = s.config_from_labels(pairs.clone()).unwrap();
        pairs.reverse();
        let b = s.config_from_labels(pairs).unwrap();
        assert_eq!(s.canonical_key(&a), s.canonical_key(&b));
        let c = a.with_index(0, 0);
        assert_ne!(s.canonical_key(&a), s.canonical_key(&c));
    }

    #[test]
    fn keys_are_injective_on_enumerable_space() {
        let s = small(&[4, 5, 3, 6]);
        let keys: HashSet<Vec<u8>> = s.enumerate().map(|c| s.canonical_key(&c)).collect();
        assert_eq!(keys.len(), 360);
    }

    #[test]
    fn space_file_round_trip() {
        let s = default_text_space();
        let back = SearchSpace::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.digest(), s.digest());
        let bumped = s.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(SearchSpace::from_json(&bumped), Err(SpaceError::Version(9))));
    }

    proptest! {
        #[test]
        fn samples_are_valid_and_keys_round_trip(seed in any::<u64>()) {
            let s = default_text_space();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = s.sample_uniform(&mut rng).unwrap();
            prop_assert!(s.is_valid(&c));
            prop_assert_eq!(s.parse_key(&s.canonical_key(&c)).unwrap(), c);
        }
    }
}
