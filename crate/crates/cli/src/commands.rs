use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ragtune::controllers::{Params, Registry};
use ragtune::engine::{run_search_with, EvalCache, Objective, RagObjective, RunRecord, RunWriter, SearchSpec, SyntheticObjective};
use ragtune::environment::{SyntheticEnvironment, SyntheticSpec};
use ragtune::exec::Parallelism;
use ragtune::metrics::{score_answer, MetricWeights, Tokenization};
use ragtune::reporting::{self, AblatedObjective, AblationSpec};
use ragtune::search_space::SearchSpace;

use crate::setup::{EnvArgs, EnvEntry, EvalArgs, EvalSetup, Source, WeightsField};

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(err) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if err.kind() != std::io::ErrorKind::BrokenPipe {
            log::error!("writing to stdout: {err}");
        }
    }
}

fn parse_params(raw: &[String]) -> Result<Params> {
    raw.iter()
        .map(|p| {
            let (k, v) = p.split_once('=').with_context(|| format!("--param `{p}` is not name=value"))?;
            let v: f64 = v.trim().parse().with_context(|| format!("--param `{p}` needs a numeric value"))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn open_cache(dir: Option<&Path>) -> Result<EvalCache> {
    Ok(match dir {
        Some(d) => EvalCache::on_disk(d).with_context(|| format!("opening cache {}", d.display()))?,
        None => EvalCache::in_memory(),
    })
}

fn check_algorithms(registry: &Registry, algorithms: &[String]) -> Result<()> {
    for a in algorithms {
        if registry.entry(a).is_none() {
            bail!("unknown algorithm `{a}`; known: {}", registry.ids().join(", "));
        }
    }
    Ok(())
}

/// Runs one search, streaming trials into `out` when given.
fn search(objective: &dyn Objective, registry: &Registry, spec: &SearchSpec, cache: &EvalCache, out: Option<&Path>, dump_traces: bool) -> Result<RunRecord> {
    let record = match out {
        Some(dir) => {
            let mut writer = RunWriter::create(dir, dump_traces).with_context(|| format!("creating {}", dir.display()))?;
            let record = run_search_with(objective, registry, spec, cache, &mut |t, traces| writer.trial(t, traces))?;
            writer.finish(&record)?;
            record
        }
        None => run_search_with(objective, registry, spec, cache, &mut |_, _| Ok(()))?,
    };
    Ok(record)
}

fn summary(r: &RunRecord) -> String {
    let failed = r.trials.iter().filter(|t| t.failed).count();
    let hits = r.trials.iter().filter(|t| t.cache_hit).count();
    let mut s = format!(
        "{} / {} / seed {}: best {:.4}, trial mean {:.4}, {} trials ({} failed, {} cached), {:.2}s",
        r.env,
        r.algorithm,
        r.seed,
        r.best_reward(),
        r.trial_mean(),
        r.trials.len(),
        failed,
        hits,
        r.total_time
    );
    if let Some(best) = r.best() {
        s.push_str(&format!("\nbest config (trial {}):", best.index));
        for (k, v) in &best.labels {
            s.push_str(&format!("\n  {k} = {v}"));
        }
    }
    s
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    env: &EnvArgs,
    eval: &EvalArgs,
    algo: &str,
    params: &[String],
    seed: u64,
    budget: usize,
    cache: Option<&Path>,
    out: Option<&Path>,
    dump_traces: bool,
) -> Result<()> {
    let source = env.load()?;
    let mut setup = EvalSetup::from_args(eval)?;
    setup.options.keep_traces = dump_traces;
    let registry = Registry::builtin();
    check_algorithms(&registry, &[algo.to_string()])?;
    let objective = setup.objective(&source);
    let spec = SearchSpec { algorithm: algo.to_string(), params: parse_params(params)?, seed, budget };
    let record = search(objective.as_ref(), &registry, &spec, &open_cache(cache)?, out, dump_traces)?;
    stdout(&(summary(&record) + "\n"));
    Ok(())
}

fn default_seeds() -> Vec<u64> {
    vec![11, 22, 33]
}

fn default_budget() -> usize {
    30
}

/// Fields shared by bench manifests and ablation plans.
#[derive(Debug, Deserialize)]
struct Protocol {
    algorithms: Vec<String>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_budget")]
    budget: usize,
    #[serde(default)]
    weights: Option<WeightsField>,
    #[serde(default)]
    space: Option<String>,
    #[serde(default)]
    gateway: Option<PathBuf>,
    #[serde(default)]
    raw_tokens: bool,
    /// Controller hyperparameters by algorithm id.
    #[serde(default)]
    params: BTreeMap<String, Params>,
}

impl Protocol {
    fn setup(&self, base: &Path, workers: usize) -> Result<EvalSetup> {
        let weights = match &self.weights {
            Some(w) => w.resolve()?,
            None => MetricWeights::default(),
        };
        let space = match self.space.as_deref() {
            None | Some("default-text") => "default-text".to_string(),
            Some(p) => base.join(p).display().to_string(),
        };
        let gateway = self.gateway.as_ref().map(|g| base.join(g));
        EvalSetup::new(&space, weights, self.raw_tokens, gateway.as_deref(), workers, None)
    }

    /// Runs every algorithm × seed of `objective` under `dir/<algorithm>/seed-<n>`.
    fn run_all(&self, objective: &dyn Objective, registry: &Registry, cache: &EvalCache, dir: &Path) -> Result<Vec<RunRecord>> {
        let mut records = Vec::new();
        for alg in &self.algorithms {
            for &seed in &self.seeds {
                let spec = SearchSpec { algorithm: alg.clone(), params: self.params.get(alg).cloned().unwrap_or_default(), seed, budget: self.budget };
                let run_dir = dir.join(alg).join(format!("seed-{seed}"));
                let record = search(objective, registry, &spec, cache, Some(&run_dir), false)?;
                eprintln!("{}", summary(&record).lines().next().unwrap_or_default());
                records.push(record);
            }
        }
        Ok(records)
    }
}

#[derive(Debug, Deserialize)]
struct Manifest {
    envs: Vec<EnvEntry>,
    #[serde(flatten)]
    protocol: Protocol,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn display_name(registry: &Registry) -> impl Fn(&str) -> String + '_ {
    move |id| registry.display_name(id)
}

pub fn bench(manifest_path: &Path, out: &Path, cache: Option<&Path>, workers: usize) -> Result<()> {
    let manifest: Manifest = read_json(manifest_path)?;
    let base = base_dir(manifest_path);
    let registry = Registry::builtin();
    check_algorithms(&registry, &manifest.protocol.algorithms)?;
    let setup = manifest.protocol.setup(&base, workers)?;
    let cache = open_cache(cache)?;
    let mut records = Vec::new();
    for entry in &manifest.envs {
        let source = entry.load(&base)?;
        let objective = setup.objective(&source);
        records.extend(manifest.protocol.run_all(objective.as_ref(), &registry, &cache, &out.join(source.name()))?);
    }
    let table = reporting::aggregate(&records);
    let standings = reporting::wins_and_ranks(&table);
    stdout(&reporting::table2_text(&table, &standings, &display_name(&registry)));
    Ok(())
}

#[derive(Debug, Deserialize)]
struct AblationPlan {
    env: EnvEntry,
    ablations: Vec<AblationSpec>,
    #[serde(flatten)]
    protocol: Protocol,
}

pub fn ablate(plan_path: &Path, out: &Path, cache: Option<&Path>, workers: usize) -> Result<()> {
    let plan: AblationPlan = read_json(plan_path)?;
    let base = base_dir(plan_path);
    let registry = Registry::builtin();
    check_algorithms(&registry, &plan.protocol.algorithms)?;
    let setup = plan.protocol.setup(&base, workers)?;
    let source = plan.env.load(&base)?;
    let objective = setup.objective(&source);
    let cache = open_cache(cache)?;
    // build every variant first so a bad spec fails before any evaluation
    let variants: Vec<(String, AblatedObjective)> =
        plan.ablations.iter().map(|a| Ok((a.to_string(), AblatedObjective::new(objective.as_ref(), a)?))).collect::<Result<_>>()?;
    let full = plan.protocol.run_all(objective.as_ref(), &registry, &cache, &out.join("full"))?;
    let mut results = Vec::new();
    for (name, variant) in &variants {
        results.push((name.clone(), plan.protocol.run_all(variant, &registry, &cache, &out.join(name))?));
    }
    let rows = reporting::ablation_deltas(&full, &results);
    let tsv = reporting::ablation_tsv(&rows);
    fs::write(out.join("ablation.tsv"), &tsv)?;
    stdout(&tsv);
    Ok(())
}

pub fn stability(env: &EnvArgs, eval: &EvalArgs, sizes: &[usize], algorithms: &[String], seeds: &[u64], budget: usize, out: Option<&Path>) -> Result<()> {
    let source = env.load()?;
    let setup = EvalSetup::from_args(eval)?;
    let registry = Registry::builtin();
    check_algorithms(&registry, algorithms)?;
    if let Some(n) = source.items() {
        if let Some(&too_big) = sizes.iter().find(|&&s| s == 0 || s > n) {
            bail!("size {too_big} is outside 1..={n}, the environment's QA count");
        }
    }
    let rows = reporting::stability_study(sizes, algorithms, seeds, budget, &registry, Parallelism::Global, |size, seed| match &source {
        Source::Rag(e) => {
            let sub = e.subsample(size, seed).map_err(|err| err.to_string())?;
            Ok(Box::new(RagObjective::new(sub, setup.space.clone(), setup.gateway.clone(), setup.options.clone())) as Box<dyn Objective + Send>)
        }
        Source::Synthetic { name, env } => Ok(Box::new(SyntheticObjective::new(name, env.with_proxy(size, seed))) as Box<dyn Objective + Send>),
    })?;
    let tsv = reporting::stability_tsv(&rows);
    match out {
        Some(p) => fs::write(p, tsv).with_context(|| format!("writing {}", p.display()))?,
        None => stdout(&tsv),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct Sections {
    pub table2: bool,
    pub fig2: bool,
    pub fig3: bool,
    pub table13: bool,
    /// Fail instead of skipping when the random baseline is missing.
    pub strict_table13: bool,
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn report(runs: &Path, out: Option<&Path>, which: Sections, space: &str, random: &str, env_order: &[String]) -> Result<()> {
    let records = reporting::load_runs(runs).with_context(|| format!("reading runs under {}", runs.display()))?;
    if records.is_empty() {
        bail!("no runs found under {}", runs.display());
    }
    let out = out.map_or_else(|| runs.join("report"), Path::to_path_buf);
    fs::create_dir_all(&out)?;
    let registry = Registry::builtin();
    let names = display_name(&registry);
    if which.table2 {
        let order: Vec<&str> = env_order.iter().map(String::as_str).collect();
        let table = reporting::aggregate(&records).with_env_order(&order);
        let standings = reporting::wins_and_ranks(&table);
        let text = reporting::table2_text(&table, &standings, &names);
        write_file(&out, "interaction.tsv", &reporting::interaction_tsv(&table, &standings))?;
        write_file(&out, "table2.txt", &text)?;
        stdout(&text);
    }
    if which.fig2 {
        let space = SearchSpace::resolve(space)?;
        let rows = reporting::module_preferences(&reporting::best_configs(&records), &space);
        write_file(&out, "preferences.tsv", &reporting::preferences_tsv(&rows))?;
    }
    if which.fig3 {
        write_file(&out, "trajectories.tsv", &reporting::trajectory_tsv(&records))?;
    }
    if which.table13 {
        match reporting::random_baseline_delta(&records, random) {
            Ok(rows) => {
                let text = reporting::table13_text(&rows, &names);
                write_file(&out, "table13.txt", &text)?;
                stdout(&text);
            }
            Err(err) if !which.strict_table13 => log::warn!("skipping random-baseline deltas: {err}"),
            Err(err) => return Err(err.into()),
        }
    }
    Ok(())
}

fn id_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

#[derive(Deserialize)]
struct PredLine {
    id: serde_json::Value,
    answer: String,
}

#[derive(Deserialize)]
struct RefLine {
    id: serde_json::Value,
    answers: Vec<String>,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn score(pred: &Path, reference: &Path, weights: &str, raw_tokens: bool, out: Option<&Path>) -> Result<()> {
    let weights: MetricWeights = weights.parse()?;
    let tokenization = if raw_tokens { Tokenization::Raw } else { Tokenization::Normalized };
    let mut refs: HashMap<String, Vec<String>> = HashMap::new();
    for r in read_lines::<RefLine>(reference)? {
        let id = id_string(&r.id).context("reference ids must be strings or numbers")?;
        refs.insert(id, r.answers);
    }
    let mut body = String::new();
    let mut total = 0.0;
    let preds = read_lines::<PredLine>(pred)?;
    for p in &preds {
        let id = id_string(&p.id).context("prediction ids must be strings or numbers")?;
        let answers = refs.get(&id).with_context(|| format!("no reference for id `{id}`"))?;
        let report = score_answer(&p.answer, answers, &weights, tokenization);
        total += report.weighted;
        body.push_str(&serde_json::to_string(&serde_json::json!({ "id": id, "report": report }))?);
        body.push('\n');
    }
    let reward = if preds.is_empty() { 0.0 } else { total / preds.len() as f64 };
    body.push_str(&serde_json::to_string(&serde_json::json!({ "aggregate": { "reward": reward, "items": preds.len() } }))?);
    body.push('\n');
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display()))?,
        None => stdout(&body),
    }
    Ok(())
}

pub fn synth_gen(space_spec: &str, seed: u64, pairwise: usize, noise_sigma: f64, out: Option<&Path>) -> Result<()> {
    let space = SearchSpace::resolve(space_spec)?;
    let space_ref = if space_spec == "default-text" {
        serde_json::Value::String(space_spec.to_string())
    } else {
        serde_json::from_str(&space.to_json())?
    };
    let spec = SyntheticSpec::random(space_ref, &space, seed, pairwise, noise_sigma);
    SyntheticEnvironment::build(space, &spec)?;
    let text = serde_json::to_string_pretty(&spec)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => stdout(&text),
    }
    Ok(())
}
