//! Answer scoring: lexical metrics, greedy embedding recall, judge parsing
//! and the weighted scalar objective.
//!
//! All lexical metrics operate on tokens produced by [`Tokenization`]. The
//! default normalizes (lowercase, punctuation removed, whitespace collapsed)
//! before splitting on whitespace.
//!
//! Empty-input conventions shared by token-F1, ROUGE-L, METEOR and BLEU:
//! both sides empty scores 1, exactly one side empty scores 0.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::normalize_answer;

const BLEU_MAX_N: usize = 4;
const METEOR_ALPHA_WEIGHT: f64 = 9.0;
const METEOR_PENALTY_GAMMA: f64 = 0.5;
const METEOR_PENALTY_BETA: i32 = 3;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    /// Lowercase, strip punctuation, collapse whitespace, then split.
    #[default]
    Normalized,
    /// Split on whitespace only.
    Raw,
}

impl Tokenization {
    pub fn tokens(self, text: &str) -> Vec<String> {
        match self {
            Tokenization::Normalized => normalize_answer(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect(),
            Tokenization::Raw => text.split_whitespace().map(str::to_string).collect(),
        }
    }
}

fn empty_convention(a: usize, b: usize) -> Option<f64> {
    match (a, b) {
        (0, 0) => Some(1.0),
        (0, _) | (_, 0) => Some(0.0),
        _ => None,
    }
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// 1 when the normalized strings are equal.
pub fn exact_match(candidate: &str, reference: &str) -> f64 {
    if normalize_answer(candidate) == normalize_answer(reference) {
        1.0
    } else {
        0.0
    }
}

pub fn token_f1(candidate: &str, reference: &str) -> f64 {
    let t = Tokenization::Normalized;
    token_f1_tokens(&t.tokens(candidate), &t.tokens(reference))
}

/// Bag-of-words F1 with multiset overlap.
pub fn token_f1_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if let Some(v) = empty_convention(candidate.len(), reference.len()) {
        return v;
    }
    let rc = counts(reference);
    let overlap: usize = counts(candidate).iter().map(|(t, &n)| n.min(rc.get(t).copied().unwrap_or(0))).sum();
    2.0 * overlap as f64 / (candidate.len() + reference.len()) as f64
}

/// Length of the longest common subsequence, O(n·m) time and O(m) space.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let t = Tokenization::Normalized;
    rouge_l_tokens(&t.tokens(candidate), &t.tokens(reference))
}

/// LCS-based F-measure with recall and precision weighted equally.
pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if let Some(v) = empty_convention(candidate.len(), reference.len()) {
        return v;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let r = lcs / reference.len() as f64;
    let p = lcs / candidate.len() as f64;
    2.0 * r * p / (r + p)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and total candidate n-grams for one order.
pub fn modified_precision_counts(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if candidate.len() < n {
        return (0, 0);
    }
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, candidate.len() + 1 - n)
}

pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let t = Tokenization::Normalized;
    bleu_tokens(&t.tokens(candidate), &t.tokens(reference))
}

/// Sentence BLEU up to 4-grams with uniform weights and add-one smoothing
/// on every precision. An empty candidate scores 0.
pub fn bleu_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    let log_sum: f64 = (1..=BLEU_MAX_N)
        .map(|n| {
            let (m, total) = modified_precision_counts(candidate, reference, n);
            ((m as f64 + 1.0) / (total as f64 + 1.0)).ln()
        })
        .sum();
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = (1.0 - r / c).exp().min(1.0);
    bp * (log_sum / BLEU_MAX_N as f64).exp()
}

pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let t = Tokenization::Normalized;
    meteor_tokens(&t.tokens(candidate), &t.tokens(reference))
}

/// Exact-unigram METEOR. Candidate tokens are aligned left to right, each to
/// the first unused equal reference token. Fragmentation penalty is
/// `0.5 * (chunks / matches)^3`.
pub fn meteor_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if let Some(v) = empty_convention(candidate.len(), reference.len()) {
        return v;
    }
    let mut used = vec![false; reference.len()];
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for (i, tok) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && &reference[j] == tok) {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = (1.0 + METEOR_ALPHA_WEIGHT) * p * r / (r + METEOR_ALPHA_WEIGHT * p);
    let pen = METEOR_PENALTY_GAMMA * (chunks as f64 / m as f64).powi(METEOR_PENALTY_BETA);
    f * (1.0 - pen)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy-matching recall: mean over reference token vectors of the best
/// cosine against any candidate token vector.
pub fn greedy_recall(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    if let Some(v) = empty_convention(candidate.len(), reference.len()) {
        return v;
    }
    let total: f64 = reference
        .iter()
        .map(|r| candidate.iter().map(|c| cosine(c, r)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    total / reference.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub score: u8,
    pub parse_failure: bool,
}

/// Reads the first JSON object in `raw` and its integer `score` field.
/// Anything other than 0 or 1 yields 0 with `parse_failure` set.
pub fn parse_judge(raw: &str) -> JudgeVerdict {
    let failed = JudgeVerdict { score: 0, parse_failure: true };
    for (pos, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(obj))) = stream.next() {
            return match obj.get("score").and_then(serde_json::Value::as_u64) {
                Some(s @ (0 | 1)) => JudgeVerdict { score: s as u8, parse_failure: false },
                _ => failed,
            };
        }
    }
    failed
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WeightsError {
    #[error("weight `{0}` is negative or not finite")]
    Invalid(String),
    #[error("weights sum to {0}, expected 1")]
    Sum(f64),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("malformed weight entry `{0}`")]
    Syntax(String),
}

/// Non-negative metric weights summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    pub rouge_l: f64,
    pub meteor: f64,
    pub token_f1: f64,
    pub bleu: f64,
    #[serde(default)]
    pub em: f64,
    #[serde(default)]
    pub bertscore_recall: f64,
    #[serde(default)]
    pub judge: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights { rouge_l: 0.25, meteor: 0.25, token_f1: 0.25, bleu: 0.25, em: 0.0, bertscore_recall: 0.0, judge: 0.0 }
    }
}

impl MetricWeights {
    pub const NAMES: [&'static str; 7] = ["rouge_l", "meteor", "token_f1", "bleu", "em", "bertscore_recall", "judge"];

    fn as_array(&self) -> [f64; 7] {
        [self.rouge_l, self.meteor, self.token_f1, self.bleu, self.em, self.bertscore_recall, self.judge]
    }

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "rouge_l" => &mut self.rouge_l,
            "meteor" => &mut self.meteor,
            "token_f1" => &mut self.token_f1,
            "bleu" => &mut self.bleu,
            "em" => &mut self.em,
            "bertscore_recall" | "bertscore" => &mut self.bertscore_recall,
            "judge" => &mut self.judge,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), WeightsError> {
        for (name, w) in Self::NAMES.iter().zip(self.as_array()) {
            if !w.is_finite() || w < 0.0 {
                return Err(WeightsError::Invalid(name.to_string()));
            }
        }
        let sum: f64 = self.as_array().iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(WeightsError::Sum(sum));
        }
        Ok(())
    }

    pub fn needs_bertscore(&self) -> bool {
        self.bertscore_recall > 0.0
    }

    pub fn needs_judge(&self) -> bool {
        self.judge > 0.0
    }

    /// Stable text form used in cache keys and run metadata.
    pub fn digest_string(&self) -> String {
        Self::NAMES
            .iter()
            .zip(self.as_array())
            .map(|(n, w)| format!("{n}={w:?}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for MetricWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Self::NAMES
            .iter()
            .zip(self.as_array())
            .filter(|(_, w)| *w != 0.0)
            .map(|(n, w)| format!("{n}={w}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses `default` or a comma-separated list such as
/// `rouge_l=0.5,token_f1=0.5`. Unlisted metrics get weight 0.
impl FromStr for MetricWeights {
    type Err = WeightsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "default" {
            return Ok(MetricWeights::default());
        }
        let mut w = MetricWeights { rouge_l: 0.0, meteor: 0.0, token_f1: 0.0, bleu: 0.0, em: 0.0, bertscore_recall: 0.0, judge: 0.0 };
        for part in s.split(',') {
            let (name, value) = part.split_once('=').ok_or_else(|| WeightsError::Syntax(part.to_string()))?;
            let value: f64 = value.trim().parse().map_err(|_| WeightsError::Syntax(part.to_string()))?;
            let slot = w.slot(name.trim()).ok_or_else(|| WeightsError::UnknownMetric(name.trim().to_string()))?;
            *slot = value;
        }
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge_l: f64,
    pub meteor: f64,
    pub token_f1: f64,
    pub bleu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bertscore_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<f64>,
    pub weighted: f64,
}

impl MetricReport {
    /// Sets an optional metric and recomputes the weighted score.
    pub fn with_bertscore(mut self, value: f64, weights: &MetricWeights) -> Self {
        self.bertscore_recall = Some(value);
        self.weighted = self.combine(weights);
        self
    }

    pub fn with_judge(mut self, value: f64, weights: &MetricWeights) -> Self {
        self.judge = Some(value);
        self.weighted = self.combine(weights);
        self
    }

    /// Weighted sum; optional metrics that were not computed count as 0.
    pub fn combine(&self, w: &MetricWeights) -> f64 {
        w.rouge_l * self.rouge_l
            + w.meteor * self.meteor
            + w.token_f1 * self.token_f1
            + w.bleu * self.bleu
            + w.em * self.em.unwrap_or(0.0)
            + w.bertscore_recall * self.bertscore_recall.unwrap_or(0.0)
            + w.judge * self.judge.unwrap_or(0.0)
    }

    fn zero() -> MetricReport {
        MetricReport { rouge_l: 0.0, meteor: 0.0, token_f1: 0.0, bleu: 0.0, em: Some(0.0), bertscore_recall: None, judge: None, weighted: 0.0 }
    }
}

/// Scores one answer against its references. Each metric takes its maximum
/// over references independently.
pub fn score_answer(candidate: &str, references: &[String], weights: &MetricWeights, tokenization: Tokenization) -> MetricReport {
    let cand = tokenization.tokens(candidate);
    let mut report = MetricReport::zero();
    for reference in references {
        let r = tokenization.tokens(reference);
        report.rouge_l = report.rouge_l.max(rouge_l_tokens(&cand, &r));
        report.meteor = report.meteor.max(meteor_tokens(&cand, &r));
        report.token_f1 = report.token_f1.max(token_f1_tokens(&cand, &r));
        report.bleu = report.bleu.max(bleu_tokens(&cand, &r));
        let em = match tokenization {
            Tokenization::Normalized => exact_match(candidate, reference),
            Tokenization::Raw => f64::from(u8::from(cand == r)),
        };
        report.em = Some(report.em.unwrap_or(0.0).max(em));
    }
    report.weighted = report.combine(weights);
    report
}

/// Mean weighted score over items, plus each item's report.
pub fn score_dataset(items: &[(String, Vec<String>)], weights: &MetricWeights, tokenization: Tokenization) -> (f64, Vec<MetricReport>) {
    let reports: Vec<MetricReport> = items.iter().map(|(a, refs)| score_answer(a, refs, weights, tokenization)).collect();
    let reward = if reports.is_empty() { 0.0 } else { reports.iter().map(|r| r.weighted).sum::<f64>() / reports.len() as f64 };
    (reward, reports)
}
