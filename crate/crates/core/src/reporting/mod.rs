//! Post-hoc aggregation over finished runs: interaction tables, wins and
//! ranks, module preferences, random-baseline deltas, ablations and proxy-size
//! stability. Everything here reads immutable [`RunRecord`]s.

mod ablation;
mod emit;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controllers::Registry;
use crate::engine::{load_run, run_search, EngineError, EvalCache, Objective, RunRecord, SearchSpec, META_FILE};
use crate::exec::Parallelism;
use crate::search_space::SearchSpace;

pub use ablation::{ablation_deltas, build_ablation_space, AblatedObjective, AblationRow, AblationSpec, REMOVABLE};
pub use emit::{ablation_tsv, interaction_tsv, preferences_tsv, stability_tsv, table13_text, table2_text, trajectory_tsv};

/// Two scores closer than this are treated as tied.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no `{random}` run for env `{env}` with budget {budget}")]
    MissingRandom { random: String, env: String, budget: usize },
    #[error("invalid ablation: {0}")]
    Ablation(String),
    #[error(transparent)]
    Space(#[from] crate::search_space::SpaceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("building objective for size {size}, seed {seed}: {message}")]
    Objective { size: usize, seed: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean and population (divide-by-n) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Best-of-budget scores of one algorithm on one environment, across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionCell {
    pub env: String,
    pub algorithm: String,
    pub seed_scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl InteractionCell {
    /// `None` when `seed_scores` is empty.
    pub fn new(env: &str, algorithm: &str, seed_scores: Vec<f64>) -> Option<Self> {
        if seed_scores.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(&seed_scores);
        Some(InteractionCell { env: env.to_string(), algorithm: algorithm.to_string(), seed_scores, mean, std })
    }
}

/// Env × algorithm grid. `envs` and `algorithms` keep first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionTable {
    pub envs: Vec<String>,
    pub algorithms: Vec<String>,
    pub cells: Vec<InteractionCell>,
}

impl InteractionTable {
    pub fn get(&self, env: &str, algorithm: &str) -> Option<&InteractionCell> {
        self.cells.iter().find(|c| c.env == env && c.algorithm == algorithm)
    }

    /// Reorders the env columns; unknown names are ignored, unlisted envs keep
    /// their relative order after the listed ones.
    pub fn with_env_order(mut self, order: &[&str]) -> Self {
        let pos = |e: &String| order.iter().position(|o| o == e).unwrap_or(order.len());
        self.envs.sort_by_key(pos);
        self
    }
}

fn push_unique(list: &mut Vec<String>, item: &str) {
    if !list.iter().any(|x| x == item) {
        list.push(item.to_string());
    }
}

/// Builds a table from `(env, algorithm, seed scores)` groups. Empty groups
/// are dropped with a warning.
pub fn aggregate_scores<I>(groups: I) -> InteractionTable
where
    I: IntoIterator<Item = (String, String, Vec<f64>)>,
{
    let mut table = InteractionTable::default();
    for (env, alg, scores) in groups {
        match InteractionCell::new(&env, &alg, scores) {
            Some(cell) => {
                push_unique(&mut table.envs, &env);
                push_unique(&mut table.algorithms, &alg);
                table.cells.push(cell);
            }
            None => log::warn!("no seeds for env `{env}`, algorithm `{alg}`; cell omitted"),
        }
    }
    table
}

/// Groups runs by env × algorithm; each run contributes its best-of-budget
/// reward, ordered by seed.
pub fn aggregate(records: &[RunRecord]) -> InteractionTable {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<(u64, f64)>> = HashMap::new();
    for r in records {
        let key = (r.env.clone(), r.algorithm.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push((r.seed, r.best_reward()));
    }
    aggregate_scores(order.into_iter().map(|key| {
        let mut seeds = groups.remove(&key).unwrap_or_default();
        seeds.sort_by_key(|&(s, _)| s);
        (key.0, key.1, seeds.into_iter().map(|(_, v)| v).collect())
    }))
}

/// Column wins and average within-column rank (1 = best) of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standing {
    pub algorithm: String,
    pub wins: usize,
    pub avg_rank: f64,
    /// Env columns the algorithm appears in.
    pub columns: usize,
}

/// Ranks by mean, descending. Ties within [`TIE_EPS`] get the average of the
/// ranks they span and all share a win.
pub fn wins_and_ranks(table: &InteractionTable) -> Vec<Standing> {
    let mut ranks: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut wins: BTreeMap<&str, usize> = BTreeMap::new();
    for env in &table.envs {
        let mut col: Vec<&InteractionCell> = table.cells.iter().filter(|c| &c.env == env).collect();
        if col.len() < table.algorithms.len() {
            log::warn!("env `{env}` covers {} of {} algorithms; ranks use present cells only", col.len(), table.algorithms.len());
        }
        col.sort_by(|a, b| b.mean.total_cmp(&a.mean));
        let mut i = 0;
        while i < col.len() {
            let mut j = i + 1;
            while j < col.len() && (col[i].mean - col[j].mean).abs() <= TIE_EPS {
                j += 1;
            }
            // positions i..j are 0-based; ranks (i+1)..=j
            let rank = (i + 1 + j) as f64 / 2.0;
            for c in &col[i..j] {
                ranks.entry(&c.algorithm).or_default().push(rank);
                if i == 0 {
                    *wins.entry(&c.algorithm).or_default() += 1;
                }
            }
            i = j;
        }
    }
    table
        .algorithms
        .iter()
        .map(|alg| {
            let r = ranks.get(alg.as_str()).cloned().unwrap_or_default();
            let avg_rank = if r.is_empty() { f64::NAN } else { r.iter().sum::<f64>() / r.len() as f64 };
            Standing { algorithm: alg.clone(), wins: wins.get(alg.as_str()).copied().unwrap_or(0), avg_rank, columns: r.len() }
        })
        .collect()
}

/// The best configuration's labels of every run, tagged with its algorithm.
pub fn best_configs(records: &[RunRecord]) -> Vec<(String, BTreeMap<String, String>)> {
    records.iter().filter_map(|r| r.best().map(|b| (r.algorithm.clone(), b.labels.clone()))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub algorithm: String,
    pub module: String,
    pub dimension: String,
    pub option: String,
    pub count: usize,
    /// `count / runs`, where `runs` is the algorithm's number of best configs.
    pub frequency: f64,
    pub runs: usize,
}

/// Option frequencies among the best configurations, per algorithm and
/// dimension. Every option of `space` appears (possibly with count 0);
/// labels outside `space` follow in sorted order.
pub fn module_preferences(best: &[(String, BTreeMap<String, String>)], space: &SearchSpace) -> Vec<PreferenceRow> {
    let mut algorithms: Vec<String> = Vec::new();
    for (alg, _) in best {
        push_unique(&mut algorithms, alg);
    }
    let mut rows = Vec::new();
    for alg in &algorithms {
        let configs: Vec<&BTreeMap<String, String>> = best.iter().filter(|(a, _)| a == alg).map(|(_, c)| c).collect();
        let runs = configs.len();
        for dim in space.dimensions() {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for c in &configs {
                if let Some(v) = c.get(&dim.name) {
                    *counts.entry(v.as_str()).or_default() += 1;
                }
            }
            let mut options: Vec<&str> = dim.values.iter().map(String::as_str).collect();
            options.extend(counts.keys().copied().filter(|k| !dim.values.iter().any(|v| v == k)));
            for option in options {
                let count = counts.get(option).copied().unwrap_or(0);
                rows.push(PreferenceRow {
                    algorithm: alg.clone(),
                    module: dim.module_tag.as_str().to_string(),
                    dimension: dim.name.clone(),
                    option: option.to_string(),
                    count,
                    frequency: count as f64 / runs as f64,
                    runs,
                });
            }
        }
    }
    rows
}

/// Gain of one algorithm's best-of-budget score over the random-trial mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub env: String,
    pub algorithm: String,
    pub budget: usize,
    pub best: f64,
    pub baseline: f64,
    pub delta: f64,
}

/// `score - baseline` for each `(algorithm, best-of-budget score)`.
pub fn deltas_against(env: &str, budget: usize, baseline: f64, scores: &[(String, f64)]) -> Vec<DeltaRow> {
    scores
        .iter()
        .map(|(alg, best)| DeltaRow { env: env.to_string(), algorithm: alg.clone(), budget, best: *best, baseline, delta: best - baseline })
        .collect()
}

/// Per env and budget, the baseline is the mean reward over every trial of
/// the `random_id` runs. Algorithms with several seeds use their mean
/// best-of-budget score. Rows are sorted by delta, descending.
pub fn random_baseline_delta(records: &[RunRecord], random_id: &str) -> Result<Vec<DeltaRow>, ReportError> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for r in records {
        let g = (r.env.clone(), r.budget);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    let mut out = Vec::new();
    for (env, budget) in groups {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.env == env && r.budget == budget).collect();
        let random_trials: Vec<f64> =
            runs.iter().filter(|r| r.algorithm == random_id).flat_map(|r| r.trials.iter().map(|t| t.reward)).collect();
        if random_trials.is_empty() {
            return Err(ReportError::MissingRandom { random: random_id.to_string(), env, budget });
        }
        let baseline = mean_std(&random_trials).0;
        let mut algs: Vec<String> = Vec::new();
        for r in &runs {
            push_unique(&mut algs, &r.algorithm);
        }
        let scores: Vec<(String, f64)> = algs
            .into_iter()
            .map(|a| {
                let bests: Vec<f64> = runs.iter().filter(|r| r.algorithm == a).map(|r| r.best_reward()).collect();
                (a, mean_std(&bests).0)
            })
            .collect();
        let mut rows = deltas_against(&env, budget, baseline, &scores);
        rows.sort_by(|a, b| b.delta.total_cmp(&a.delta));
        out.extend(rows);
    }
    Ok(out)
}

/// Cross-seed dispersion of best scores for one proxy size and algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub size: usize,
    pub algorithm: String,
    pub seed_scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Runs every size × seed × algorithm search and summarizes per size and
/// algorithm. `make(size, seed)` builds the proxy objective; each search gets
/// a fresh in-memory cache. Rows come out size-major, in input order.
#[allow(clippy::too_many_arguments)]
pub fn stability_study<F>(
    sizes: &[usize],
    algorithms: &[String],
    seeds: &[u64],
    budget: usize,
    registry: &Registry,
    parallelism: Parallelism,
    make: F,
) -> Result<Vec<StabilityRow>, ReportError>
where
    F: Fn(usize, u64) -> Result<Box<dyn Objective + Send>, String> + Sync,
{
    let mut tasks = Vec::new();
    for &size in sizes {
        for alg in algorithms {
            for &seed in seeds {
                tasks.push((size, alg.clone(), seed));
            }
        }
    }
    let results = parallelism.map(&tasks, |_, (size, alg, seed)| -> Result<f64, ReportError> {
        let objective =
            make(*size, *seed).map_err(|message| ReportError::Objective { size: *size, seed: *seed, message })?;
        let spec = SearchSpec { algorithm: alg.clone(), params: Default::default(), seed: *seed, budget };
        let run = run_search(objective.as_ref(), registry, &spec, &EvalCache::in_memory())?;
        Ok(run.best_reward())
    });
    let mut results = results.into_iter();
    let mut rows = Vec::new();
    for &size in sizes {
        for alg in algorithms {
            let scores = results.by_ref().take(seeds.len()).collect::<Result<Vec<f64>, _>>()?;
            let (mean, std) = mean_std(&scores);
            rows.push(StabilityRow { size, algorithm: alg.clone(), seed_scores: scores, mean, std });
        }
    }
    Ok(rows)
}

/// Every run below `root` (any directory holding a run metadata file), in
/// path order.
pub fn load_runs(root: &Path) -> std::io::Result<Vec<RunRecord>> {
    let mut dirs = Vec::new();
    collect_run_dirs(root, &mut dirs)?;
    dirs.sort();
    dirs.iter().map(|d| load_run(d)).collect()
}

fn collect_run_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if dir.join(META_FILE).is_file() {
        out.push(dir.to_path_buf());
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_run_dirs(&path, out)?;
        }
    }
    Ok(())
}
