//! The budgeted search loop: propose, evaluate (through the cache), observe,
//! record.

mod cache;
mod output;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::controllers::{Budgeted, ControllerError, Params, Registry};
use crate::environment::{sha256_hex, Environment, QAItem, SyntheticEnvironment};
use crate::exec::Parallelism;
use crate::gateway::{get_prompt, judge_message, ChatRole, Gateway, ProviderFailure, FIXED};
use crate::metrics::{greedy_recall, parse_judge, score_answer, MetricReport, MetricWeights, Tokenization};
use crate::pipeline::{run_with_settings, IndexCache, PipelineSettings, PipelineTrace};
use crate::search_space::{PipelineConfig, SearchSpace};

pub use cache::{CacheKey, CachedValue, EvalCache};
pub use output::{load_run, RunWriter, BEST_FILE, META_FILE, TRIALS_FILE};

/// How one configuration is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub weights: MetricWeights,
    pub tokenization: Tokenization,
    /// Concurrent questions per evaluation; 0 uses the global pool and 1 runs
    /// sequentially.
    pub workers: usize,
    /// Wall-clock limit per configuration. `None` means
    /// `items * per-call timeout`.
    pub time_limit: Option<Duration>,
    /// Keep per-question traces in the [`Evaluation`].
    pub keep_traces: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { weights: MetricWeights::default(), tokenization: Tokenization::Normalized, workers: 0, time_limit: None, keep_traces: false }
    }
}

impl EvalOptions {
    fn parallelism(&self) -> Parallelism {
        match self.workers {
            0 => Parallelism::Global,
            n => Parallelism::from_workers(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub reward: f64,
    /// Per-metric means over questions.
    pub report: MetricReport,
    pub traces: Vec<PipelineTrace>,
}

/// Config-level failure; the caller assigns reward 0.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalFailure {
    #[error("question `{item}` failed: {message}")]
    Item { item: String, message: String },
    #[error("evaluation exceeded its time limit of {0:?}")]
    Timeout(Duration),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("writing run output: {0}")]
    Io(#[from] std::io::Error),
}

/// Identity of the data a reward was computed on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveInfo {
    pub env: String,
    pub qa_file_hash: String,
    pub corpus_file_hash: String,
    pub modality: String,
    pub eval_mode: String,
}

/// A black-box reward over a search space.
pub trait Objective: Sync {
    fn space(&self) -> &SearchSpace;
    fn info(&self) -> ObjectiveInfo;
    fn evaluate(&self, config: &PipelineConfig) -> Result<Evaluation, EvalFailure>;

    fn cache_key(&self, config: &PipelineConfig) -> CacheKey {
        let info = self.info();
        CacheKey {
            config: hex::encode(self.space().canonical_key(config)),
            qa_file_hash: info.qa_file_hash,
            corpus_file_hash: info.corpus_file_hash,
            modality: info.modality,
            eval_mode: info.eval_mode,
        }
    }
}

/// Mean of each metric over items; optional metrics average over the items
/// that have them.
pub fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len().max(1) as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let opt_mean = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    MetricReport {
        rouge_l: mean(&|r| r.rouge_l),
        meteor: mean(&|r| r.meteor),
        token_f1: mean(&|r| r.token_f1),
        bleu: mean(&|r| r.bleu),
        em: opt_mean(&|r| r.em),
        bertscore_recall: opt_mean(&|r| r.bertscore_recall),
        judge: opt_mean(&|r| r.judge),
        weighted: mean(&|r| r.weighted),
    }
}

/// Greedy-matching embedding recall, maximized over references.
pub fn bertscore_recall(answer: &str, references: &[String], gateway: &Gateway, tokenization: Tokenization) -> Result<f64, ProviderFailure> {
    let embed = |tokens: Vec<String>| -> Result<Vec<Vec<f64>>, ProviderFailure> {
        if tokens.is_empty() {
            Ok(Vec::new())
        } else {
            gateway.embed(gateway.metric_embedder(), &tokens)
        }
    };
    let cand = embed(tokenization.tokens(answer))?;
    let mut best: f64 = 0.0;
    for r in references {
        best = best.max(greedy_recall(&cand, &embed(tokenization.tokens(r))?));
    }
    Ok(best)
}

/// Binary judge verdict; provider failures and unparseable output give 0.
pub fn judge_score(item: &QAItem, answer: &str, gateway: &Gateway, failures: &mut Vec<String>) -> f64 {
    let template = get_prompt(ChatRole::Judge, FIXED).expect("judge template is registered");
    match gateway.chat(ChatRole::Judge, template.text, &judge_message(&item.question, &item.references, answer)) {
        Ok(raw) => {
            let v = parse_judge(&raw);
            if v.parse_failure {
                failures.push("judge: unparseable verdict".into());
            }
            f64::from(v.score)
        }
        Err(e) => {
            failures.push(format!("judge: {e}"));
            0.0
        }
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Runs the pipeline on every question and scores the answers.
///
/// Questions run concurrently up to `options.workers`; results are combined
/// in QA order, so the reward does not depend on scheduling. A fatal
/// pipeline error or panic on any question, or exceeding the time limit,
/// fails the whole configuration.
pub fn evaluate_config(
    space: &SearchSpace,
    config: &PipelineConfig,
    env: &Environment,
    gateway: &Gateway,
    index_cache: &IndexCache,
    options: &EvalOptions,
) -> Result<Evaluation, EvalFailure> {
    let settings = PipelineSettings::from_config(space, config).map_err(|e| EvalFailure::Config(e.to_string()))?;
    let limit = options.time_limit.unwrap_or_else(|| gateway.decoding().timeout() * env.qa.len().max(1) as u32);
    let start = Instant::now();
    let results = options.parallelism().map(&env.qa, |_, item| {
        if start.elapsed() > limit {
            return Err(EvalFailure::Timeout(limit));
        }
        let run = catch_unwind(AssertUnwindSafe(|| {
            let mut trace = run_with_settings(&settings, item, env, gateway, index_cache);
            if let Some(msg) = &trace.fatal {
                return Err(msg.clone());
            }
            let mut report = score_answer(&trace.answer, &item.references, &options.weights, options.tokenization);
            if options.weights.needs_bertscore() {
                match bertscore_recall(&trace.answer, &item.references, gateway, options.tokenization) {
                    Ok(v) => report = report.with_bertscore(v, &options.weights),
                    Err(e) => trace.failures.push(format!("bertscore omitted: {e}")),
                }
            }
            if options.weights.needs_judge() {
                let v = judge_score(item, &trace.answer, gateway, &mut trace.failures);
                report = report.with_judge(v, &options.weights);
            }
            Ok((trace, report))
        }));
        match run {
            Ok(Ok(out)) => Ok(out),
            Ok(Err(message)) => Err(EvalFailure::Item { item: item.id.clone(), message }),
            Err(payload) => Err(EvalFailure::Item { item: item.id.clone(), message: panic_message(payload) }),
        }
    });
    let mut traces = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        let (t, rep) = r?;
        traces.push(t);
        reports.push(rep);
    }
    if start.elapsed() > limit {
        return Err(EvalFailure::Timeout(limit));
    }
    let report = mean_report(&reports);
    if !options.keep_traces {
        traces.clear();
    }
    Ok(Evaluation { reward: report.weighted, report, traces })
}

/// RAG pipeline evaluation over a QA environment.
pub struct RagObjective {
    space: SearchSpace,
    env: Environment,
    gateway: Gateway,
    options: EvalOptions,
    index_cache: IndexCache,
}

impl RagObjective {
    pub fn new(env: Environment, space: SearchSpace, gateway: Gateway, options: EvalOptions) -> Self {
        RagObjective { space, env, gateway, options, index_cache: IndexCache::new() }
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn options(&self) -> &EvalOptions {
        &self.options
    }

    /// Digest of the scoring rule: weights, tokenization and backend.
    pub fn eval_mode(&self) -> String {
        let text = format!("weights={};tokenization={:?};gateway={}", self.options.weights.digest_string(), self.options.tokenization, self.gateway.fingerprint());
        sha256_hex(text.as_bytes())
    }
}

impl Objective for RagObjective {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn info(&self) -> ObjectiveInfo {
        ObjectiveInfo {
            env: self.env.name.clone(),
            qa_file_hash: self.env.qa_file_hash.clone(),
            corpus_file_hash: self.env.corpus_file_hash.clone(),
            modality: self.env.modality.as_str().to_string(),
            eval_mode: self.eval_mode(),
        }
    }

    fn evaluate(&self, config: &PipelineConfig) -> Result<Evaluation, EvalFailure> {
        evaluate_config(&self.space, config, &self.env, &self.gateway, &self.index_cache, &self.options)
    }
}

/// Tabular synthetic landscape. Reports carry only the weighted reward.
pub struct SyntheticObjective {
    name: String,
    env: SyntheticEnvironment,
}

impl SyntheticObjective {
    pub fn new(name: &str, env: SyntheticEnvironment) -> Self {
        SyntheticObjective { name: name.to_string(), env }
    }

    pub fn env(&self) -> &SyntheticEnvironment {
        &self.env
    }
}

impl Objective for SyntheticObjective {
    fn space(&self) -> &SearchSpace {
        self.env.space()
    }

    fn info(&self) -> ObjectiveInfo {
        let digest = self.env.digest();
        ObjectiveInfo {
            env: self.name.clone(),
            qa_file_hash: digest.clone(),
            corpus_file_hash: digest,
            modality: "synthetic".into(),
            eval_mode: "synthetic".into(),
        }
    }

    fn evaluate(&self, config: &PipelineConfig) -> Result<Evaluation, EvalFailure> {
        let r = self.env.reward(config);
        let report = MetricReport { rouge_l: 0.0, meteor: 0.0, token_f1: 0.0, bleu: 0.0, em: None, bertscore_recall: None, judge: None, weighted: r };
        Ok(Evaluation { reward: r, report, traces: Vec::new() })
    }
}

/// Which controller to run, and for how long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub algorithm: String,
    #[serde(default)]
    pub params: Params,
    pub seed: u64,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub config: PipelineConfig,
    pub labels: BTreeMap<String, String>,
    pub reward: f64,
    pub per_metric: Option<MetricReport>,
    pub cache_hit: bool,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: String,
    pub qa_file_hash: String,
    pub corpus_file_hash: String,
    pub modality: String,
    pub eval_mode: String,
    pub space_digest: String,
    pub algorithm: String,
    pub params: Params,
    pub seed: u64,
    pub budget: usize,
    pub trials: Vec<TrialRecord>,
    pub best_so_far: Vec<f64>,
    /// Trials that completed evaluation (fresh or cached).
    pub eval_count: usize,
    /// Seconds: whole run, sum of trial times, and the remainder.
    pub total_time: f64,
    pub trial_time: f64,
    pub overhead: f64,
}

impl RunRecord {
    /// Earliest trial with the highest reward.
    pub fn best(&self) -> Option<&TrialRecord> {
        self.trials.iter().fold(None, |best: Option<&TrialRecord>, t| match best {
            Some(b) if b.reward >= t.reward => Some(b),
            _ => Some(t),
        })
    }

    pub fn best_reward(&self) -> f64 {
        self.best().map_or(0.0, |t| t.reward)
    }

    /// Mean reward over all trials.
    pub fn trial_mean(&self) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().map(|t| t.reward).sum::<f64>() / self.trials.len() as f64
    }

    /// The record with every wall-clock field zeroed.
    pub fn without_timings(&self) -> RunRecord {
        let mut r = self.clone();
        r.total_time = 0.0;
        r.trial_time = 0.0;
        r.overhead = 0.0;
        for t in &mut r.trials {
            t.wall_time = 0.0;
        }
        r
    }
}

pub fn best_so_far(rewards: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut cur = f64::NEG_INFINITY;
    rewards
        .into_iter()
        .map(|r| {
            cur = cur.max(r);
            cur
        })
        .collect()
}

/// Runs `spec.budget` propose/evaluate/observe cycles.
pub fn run_search(objective: &dyn Objective, registry: &Registry, spec: &SearchSpec, cache: &EvalCache) -> Result<RunRecord, EngineError> {
    run_search_with(objective, registry, spec, cache, &mut |_, _| Ok(()))
}

/// [`run_search`] with a callback after every trial, receiving the record
/// and any kept traces.
pub fn run_search_with(
    objective: &dyn Objective,
    registry: &Registry,
    spec: &SearchSpec,
    cache: &EvalCache,
    on_trial: &mut dyn FnMut(&TrialRecord, &[PipelineTrace]) -> std::io::Result<()>,
) -> Result<RunRecord, EngineError> {
    if spec.budget == 0 {
        return Err(EngineError::ZeroBudget);
    }
    let started = Instant::now();
    let space = objective.space();
    let info = objective.info();
    let inner = registry.build(&spec.algorithm, space, spec.seed, &spec.params)?;
    let mut controller = Budgeted::new(inner, spec.budget);
    let mut trials = Vec::with_capacity(spec.budget);
    for index in 0..spec.budget {
        let config = controller.propose()?;
        let t0 = Instant::now();
        let key = objective.cache_key(&config);
        let (outcome, cache_hit, traces) = match cache.get(&key) {
            Some(v) => (Ok(v), true, Vec::new()),
            None => match objective.evaluate(&config) {
                Ok(e) => {
                    let v = CachedValue { reward: e.reward, report: e.report };
                    cache.put(&key, &v);
                    (Ok(v), false, e.traces)
                }
                Err(f) => (Err(f), false, Vec::new()),
            },
        };
        let record = match outcome {
            Ok(v) => TrialRecord {
                index,
                labels: labels(space, &config),
                config: config.clone(),
                reward: v.reward,
                per_metric: Some(v.report),
                cache_hit,
                failed: false,
                failure: None,
                wall_time: t0.elapsed().as_secs_f64(),
            },
            Err(f) => {
                log::warn!("trial {index} failed: {f}");
                TrialRecord {
                    index,
                    labels: labels(space, &config),
                    config: config.clone(),
                    reward: 0.0,
                    per_metric: None,
                    cache_hit: false,
                    failed: true,
                    failure: Some(f.to_string()),
                    wall_time: t0.elapsed().as_secs_f64(),
                }
            }
        };
        controller.observe(&config, record.reward, record.failed)?;
        let observed = &controller.history().entries[index];
        let record = TrialRecord { reward: observed.reward, ..record };
        on_trial(&record, &traces)?;
        trials.push(record);
    }
    let trial_time: f64 = trials.iter().map(|t| t.wall_time).sum();
    let total_time = started.elapsed().as_secs_f64();
    Ok(RunRecord {
        env: info.env,
        qa_file_hash: info.qa_file_hash,
        corpus_file_hash: info.corpus_file_hash,
        modality: info.modality,
        eval_mode: info.eval_mode,
        space_digest: space.digest(),
        algorithm: spec.algorithm.clone(),
        params: spec.params.clone(),
        seed: spec.seed,
        budget: spec.budget,
        best_so_far: best_so_far(trials.iter().map(|t| t.reward)),
        eval_count: trials.iter().filter(|t| !t.failed).count(),
        trials,
        total_time,
        trial_time,
        overhead: (total_time - trial_time).max(0.0),
    })
}

fn labels(space: &SearchSpace, config: &PipelineConfig) -> BTreeMap<String, String> {
    space.labels(config).into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}
