//! Turning command-line flags and manifest entries into objectives.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use ragtune::engine::{EvalOptions, Objective, RagObjective, SyntheticObjective};
use ragtune::environment::{load_environment, Environment, SyntheticEnvironment, SyntheticSpec};
use ragtune::gateway::{Gateway, GatewayConfig};
use ragtune::metrics::{MetricWeights, Tokenization};
use ragtune::search_space::SearchSpace;

/// Where the environment comes from.
#[derive(Debug, Clone, Args)]
pub struct EnvArgs {
    /// Directory holding `qa.jsonl` and `corpus.jsonl`.
    #[arg(long, conflicts_with_all = ["qa", "synthetic"])]
    pub env: Option<PathBuf>,
    #[arg(long, requires = "corpus", conflicts_with = "synthetic")]
    pub qa: Option<PathBuf>,
    #[arg(long, requires = "qa")]
    pub corpus: Option<PathBuf>,
    /// Synthetic environment definition file.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Name recorded in run metadata (defaults to the directory or file stem).
    #[arg(long)]
    pub name: Option<String>,
}

/// How configurations are scored.
#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// `default-text` or a space definition file. Ignored for synthetic envs.
    #[arg(long, default_value = "default-text")]
    pub space: String,
    /// `default` or e.g. `rouge_l=0.5,token_f1=0.5`.
    #[arg(long, default_value = "default")]
    pub weights: String,
    /// Split on whitespace instead of normalizing before lexical metrics.
    #[arg(long)]
    pub raw_tokens: bool,
    /// Gateway config file; the deterministic mock backend when absent.
    #[arg(long)]
    pub gateway: Option<PathBuf>,
    /// Concurrent questions per evaluation (0 = all cores, 1 = sequential).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Per-configuration wall-clock limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
}

pub enum Source {
    Rag(Environment),
    Synthetic { name: String, env: SyntheticEnvironment },
}

impl Source {
    pub fn name(&self) -> &str {
        match self {
            Source::Rag(e) => &e.name,
            Source::Synthetic { name, .. } => name,
        }
    }

    /// Number of QA items, or `None` for synthetic landscapes.
    pub fn items(&self) -> Option<usize> {
        match self {
            Source::Rag(e) => Some(e.qa.len()),
            Source::Synthetic { .. } => None,
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "env".to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_dir(dir: &Path, name: Option<&str>) -> Result<Source> {
    let mut env = load_environment(&dir.join("qa.jsonl"), &dir.join("corpus.jsonl"))
        .with_context(|| format!("loading environment from {}", dir.display()))?;
    env.name = name.map_or_else(|| stem(dir), str::to_string);
    Ok(Source::Rag(env))
}

fn load_files(qa: &Path, corpus: &Path, name: Option<&str>) -> Result<Source> {
    let mut env = load_environment(qa, corpus).with_context(|| format!("loading {} and {}", qa.display(), corpus.display()))?;
    if let Some(n) = name {
        env.name = n.to_string();
    }
    Ok(Source::Rag(env))
}

fn load_synthetic(path: &Path, name: Option<&str>) -> Result<Source> {
    let spec = SyntheticSpec::load(path).with_context(|| format!("reading {}", path.display()))?;
    let env = SyntheticEnvironment::from_spec(&spec, path.parent())?;
    Ok(Source::Synthetic { name: name.map_or_else(|| stem(path), str::to_string), env })
}

impl EnvArgs {
    pub fn load(&self) -> Result<Source> {
        let name = self.name.as_deref();
        match (&self.env, &self.qa, &self.corpus, &self.synthetic) {
            (Some(dir), ..) => load_dir(dir, name),
            (None, Some(qa), Some(corpus), None) => load_files(qa, corpus, name),
            (None, None, None, Some(path)) => load_synthetic(path, name),
            _ => bail!("give one of --env <dir>, --qa <file> --corpus <file>, or --synthetic <file>"),
        }
    }
}

/// An environment in a manifest or ablation plan. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, Deserialize)]
pub struct EnvEntry {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub qa: Option<PathBuf>,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<PathBuf>,
}

impl EnvEntry {
    pub fn load(&self, base: &Path) -> Result<Source> {
        let name = self.name.as_deref();
        match (&self.dir, &self.qa, &self.corpus, &self.synthetic) {
            (Some(d), None, None, None) => load_dir(&base.join(d), name),
            (None, Some(q), Some(c), None) => load_files(&base.join(q), &base.join(c), name),
            (None, None, None, Some(s)) => load_synthetic(&base.join(s), name),
            _ => bail!("environment entries need exactly one of `dir`, `qa` + `corpus`, or `synthetic`"),
        }
    }
}

/// Metric weights given as a spec string or as an object.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum WeightsField {
    Spec(String),
    Explicit(MetricWeights),
}

impl WeightsField {
    pub fn resolve(&self) -> Result<MetricWeights> {
        let w = match self {
            WeightsField::Spec(s) => s.parse()?,
            WeightsField::Explicit(w) => {
                w.validate()?;
                *w
            }
        };
        Ok(w)
    }
}

/// Everything an objective needs besides the environment.
pub struct EvalSetup {
    pub space: SearchSpace,
    pub gateway: Gateway,
    pub options: EvalOptions,
}

impl EvalSetup {
    pub fn new(space: &str, weights: MetricWeights, raw_tokens: bool, gateway: Option<&Path>, workers: usize, time_limit: Option<f64>) -> Result<Self> {
        let space = SearchSpace::resolve(space).with_context(|| format!("loading space `{space}`"))?;
        let gateway = match gateway {
            Some(path) => Gateway::from_config(&GatewayConfig::load(path)?)?,
            None => Gateway::mock(),
        };
        let time_limit = match time_limit {
            Some(s) if !(s.is_finite() && s > 0.0) => bail!("--time-limit must be a positive number of seconds"),
            Some(s) => Some(Duration::from_secs_f64(s)),
            None => None,
        };
        let options = EvalOptions {
            weights,
            tokenization: if raw_tokens { Tokenization::Raw } else { Tokenization::Normalized },
            workers,
            time_limit,
            keep_traces: false,
        };
        Ok(EvalSetup { space, gateway, options })
    }

    pub fn from_args(args: &EvalArgs) -> Result<Self> {
        EvalSetup::new(&args.space, args.weights.parse()?, args.raw_tokens, args.gateway.as_deref(), args.workers, args.time_limit)
    }

    pub fn objective(&self, source: &Source) -> Box<dyn Objective + Send> {
        match source {
            Source::Rag(env) => Box::new(RagObjective::new(env.clone(), self.space.clone(), self.gateway.clone(), self.options.clone())),
            Source::Synthetic { name, env } => Box::new(SyntheticObjective::new(name, env.clone())),
        }
    }
}
