use std::fmt;

use serde::{Deserialize, Serialize};

use super::{mean_std, push_unique, ReportError};
use crate::engine::{EvalFailure, Evaluation, Objective, ObjectiveInfo, RunRecord};
use crate::search_space::{ModuleTag, PipelineConfig, SearchSpace, OFF};

/// Modules that can be switched off wholesale.
pub const REMOVABLE: [ModuleTag; 3] = [ModuleTag::Rewriter, ModuleTag::Reranker, ModuleTag::Pruner];

/// One ablation variant, written in spec files as
/// `{"kind": "remove_module", "target": "pruner"}` or
/// `{"kind": "fix_dimension", "target": {"dimension": "retriever_top_k", "value": "5"}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum AblationSpec {
    RemoveModule(ModuleTag),
    FixDimension { dimension: String, value: String },
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationSpec::RemoveModule(m) => write!(f, "no-{m}"),
            AblationSpec::FixDimension { dimension, value } => write!(f, "{dimension}={value}"),
        }
    }
}

/// The value a removed module's dimension collapses to: `off` when offered,
/// otherwise the largest numeric value. For the reranker this keeps its
/// top-k from truncating the retrieved list once reranking is off.
fn removed_value(space: &SearchSpace, dim: usize) -> Result<String, ReportError> {
    let d = &space.dimensions()[dim];
    if d.index_of(OFF).is_some() {
        return Ok(OFF.to_string());
    }
    let mut best: Option<(f64, &String)> = None;
    for v in &d.values {
        let x: f64 = v
            .parse()
            .map_err(|_| ReportError::Ablation(format!("dimension `{}` has neither `off` nor numeric values", d.name)))?;
        if best.is_none_or(|(b, _)| x > b) {
            best = Some((x, v));
        }
    }
    Ok(best.expect("dimensions are never empty").1.clone())
}

/// Copy of `space` with the ablated dimensions collapsed to one value. All
/// other dimensions and the constraints are left as they are.
pub fn build_ablation_space(space: &SearchSpace, spec: &AblationSpec) -> Result<SearchSpace, ReportError> {
    let mut out = space.clone();
    match spec {
        AblationSpec::RemoveModule(module) => {
            if !REMOVABLE.contains(module) {
                return Err(ReportError::Ablation(format!("module `{module}` cannot be removed")));
            }
            let targets: Vec<usize> =
                space.dimensions().iter().enumerate().filter(|(_, d)| d.module_tag == *module).map(|(i, _)| i).collect();
            if targets.is_empty() {
                return Err(ReportError::Ablation(format!("space has no `{module}` dimensions")));
            }
            for i in targets {
                let value = removed_value(space, i)?;
                out = out.with_values(&space.dimensions()[i].name, vec![value])?;
            }
        }
        AblationSpec::FixDimension { dimension, value } => {
            let d = space.dimension(dimension).ok_or_else(|| ReportError::Ablation(format!("unknown dimension `{dimension}`")))?;
            if d.index_of(value).is_none() {
                return Err(ReportError::Ablation(format!("dimension `{dimension}` has no value `{value}`")));
            }
            out = out.with_values(dimension, vec![value.clone()])?;
        }
    }
    if out.cardinality() == 0 {
        return Err(ReportError::Ablation(format!("`{spec}` leaves no valid configuration")));
    }
    Ok(out)
}

/// Runs an objective over an ablated copy of its space. Configs are mapped
/// back by label, so cache keys match those of the unablated objective.
pub struct AblatedObjective<'a> {
    inner: &'a dyn Objective,
    space: SearchSpace,
}

impl<'a> AblatedObjective<'a> {
    pub fn new(inner: &'a dyn Objective, spec: &AblationSpec) -> Result<Self, ReportError> {
        Ok(AblatedObjective { space: build_ablation_space(inner.space(), spec)?, inner })
    }
}

impl Objective for AblatedObjective<'_> {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn info(&self) -> ObjectiveInfo {
        self.inner.info()
    }

    fn evaluate(&self, config: &PipelineConfig) -> Result<Evaluation, EvalFailure> {
        let mapped = self.space.translate(config, self.inner.space()).map_err(|e| EvalFailure::Config(e.to_string()))?;
        self.inner.evaluate(&mapped)
    }
}

/// Mean best-of-budget score of an algorithm under one variant, against the
/// unablated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub algorithm: String,
    pub mean: f64,
    pub full_mean: f64,
    pub delta: f64,
}

/// One row per (variant, algorithm) present in both the variant and `full`.
pub fn ablation_deltas(full: &[RunRecord], variants: &[(String, Vec<RunRecord>)]) -> Vec<AblationRow> {
    let mean_best = |runs: &[RunRecord], alg: &str| {
        let bests: Vec<f64> = runs.iter().filter(|r| r.algorithm == alg).map(RunRecord::best_reward).collect();
        (!bests.is_empty()).then(|| mean_std(&bests).0)
    };
    let mut rows = Vec::new();
    for (name, runs) in variants {
        let mut algs = Vec::new();
        for r in runs {
            push_unique(&mut algs, &r.algorithm);
        }
        for alg in algs {
            if let (Some(mean), Some(full_mean)) = (mean_best(runs, &alg), mean_best(full, &alg)) {
                rows.push(AblationRow { variant: name.clone(), algorithm: alg, mean, full_mean, delta: mean - full_mean });
            } else {
                log::warn!("no unablated runs of `{alg}`; skipping it for `{name}`");
            }
        }
    }
    rows
}
