//! Plot-ready tab-separated files and plain-text tables. Output depends only
//! on the inputs, so re-emitting is byte-identical.

use std::fmt::Write;

use super::{AblationRow, DeltaRow, InteractionTable, PreferenceRow, StabilityRow, Standing, TIE_EPS};
use crate::engine::RunRecord;

/// One row per trial of every run: running best against trial index.
pub fn trajectory_tsv(records: &[RunRecord]) -> String {
    let mut out = String::from("env\talgorithm\tseed\ttrial\treward\tbest_so_far\n");
    for r in records {
        for (t, best) in r.trials.iter().zip(&r.best_so_far) {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{:.6}\t{:.6}", r.env, r.algorithm, r.seed, t.index, t.reward, best);
        }
    }
    out
}

/// Mean and std per env column (in table order), then wins and average rank.
pub fn interaction_tsv(table: &InteractionTable, standings: &[Standing]) -> String {
    let mut out = String::from("algorithm");
    for env in &table.envs {
        let _ = write!(out, "\t{env}_mean\t{env}_std");
    }
    out.push_str("\twins\tavg_rank\n");
    for alg in &table.algorithms {
        out.push_str(alg);
        for env in &table.envs {
            match table.get(env, alg) {
                Some(c) => {
                    let _ = write!(out, "\t{:.6}\t{:.6}", c.mean, c.std);
                }
                None => out.push_str("\t\t"),
            }
        }
        match standings.iter().find(|s| &s.algorithm == alg) {
            Some(s) => {
                let _ = writeln!(out, "\t{}\t{:.4}", s.wins, s.avg_rank);
            }
            None => out.push_str("\t\t\n"),
        }
    }
    out
}

pub fn preferences_tsv(rows: &[PreferenceRow]) -> String {
    let mut out = String::from("algorithm\tmodule\tdimension\toption\tcount\truns\tfrequency\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}", r.algorithm, r.module, r.dimension, r.option, r.count, r.runs, r.frequency);
    }
    out
}

pub fn stability_tsv(rows: &[StabilityRow]) -> String {
    let mut out = String::from("size\talgorithm\tmean\tstd\tseed_scores\n");
    for r in rows {
        let scores: Vec<String> = r.seed_scores.iter().map(|s| format!("{s:.6}")).collect();
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}\t{}", r.size, r.algorithm, r.mean, r.std, scores.join(","));
    }
    out
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\talgorithm\tmean\tfull_mean\tdelta\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}\t{:+.6}", r.variant, r.algorithm, r.mean, r.full_mean, r.delta);
    }
    out
}

/// Fixed-width interaction table: `mean±std` to three decimals, `*` on
/// column winners, then wins and average rank.
pub fn table2_text(table: &InteractionTable, standings: &[Standing], display: &dyn Fn(&str) -> String) -> String {
    let name_w = table.algorithms.iter().map(|a| display(a).chars().count()).max().unwrap_or(0).max(9);
    let col_w = 13;
    let mut out = format!("{:<name_w$}", "Algorithm");
    for env in &table.envs {
        let _ = write!(out, " {env:>col_w$}");
    }
    out.push_str("  Wins  Rank\n");
    for alg in &table.algorithms {
        let _ = write!(out, "{:<name_w$}", display(alg));
        for env in &table.envs {
            let top = table.cells.iter().filter(|c| &c.env == env).map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max);
            let cell = match table.get(env, alg) {
                Some(c) => format!("{:.3}±{:.3}{}", c.mean, c.std, if c.mean >= top - TIE_EPS { "*" } else { " " }),
                None => "-".to_string(),
            };
            let _ = write!(out, " {cell:>col_w$}");
        }
        match standings.iter().find(|s| &s.algorithm == alg) {
            Some(s) => {
                let _ = writeln!(out, "  {:>4}  {:>4.1}", s.wins, s.avg_rank);
            }
            None => out.push('\n'),
        }
    }
    out
}

/// Best score and gain over the random-trial mean, one block per env.
pub fn table13_text(rows: &[DeltaRow], display: &dyn Fn(&str) -> String) -> String {
    let name_w = rows.iter().map(|r| display(&r.algorithm).chars().count()).max().unwrap_or(0).max(9);
    let mut out = String::new();
    let mut current: Option<(&str, usize)> = None;
    for r in rows {
        if current != Some((r.env.as_str(), r.budget)) {
            if current.is_some() {
                out.push('\n');
            }
            let _ = writeln!(out, "{} (budget {}, random-trial mean {:.4})", r.env, r.budget, r.baseline);
            let _ = writeln!(out, "{:<name_w$}   Score   Delta", "Algorithm");
            current = Some((r.env.as_str(), r.budget));
        }
        let _ = writeln!(out, "{:<name_w$}  {:.4}  {:+.4}", display(&r.algorithm), r.best, r.delta);
    }
    out
}
