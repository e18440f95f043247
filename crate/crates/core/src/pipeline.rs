//! One configuration, one question: rewrite, chunk, hybrid retrieve,
//! rerank, prune, generate.
//!
//! Stage failures degrade instead of aborting: the rewriter falls back to the
//! original question, retrieval to pure BM25, reranking and pruning to their
//! disabled behaviour, and generation to an empty answer. Each degradation is
//! noted in the trace. Only internal errors (such as a config that cannot be
//! interpreted) mark the trace as fatal.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::environment::{CorpusDoc, Environment, QAItem};
use crate::gateway::{context_message, get_prompt, ChatRole, Gateway, FIXED};
use crate::metrics::token_f1;
use crate::search_space::{dims, PipelineConfig, SearchSpace, SpaceError, OFF};
use crate::text::retrieval_tokens;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
const EMBED_BATCH: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("chunk overlap {overlap} must be smaller than chunk size {size}")]
    Overlap { size: usize, overlap: usize },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("`{dim}` value `{value}` is out of range")]
    OutOfRange { dim: String, value: String },
}

/// Stage parameters decoded from a configuration. Dimensions absent from the
/// space take the defaults of [`PipelineSettings::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub rewriter_prompt: String,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub retriever_embedder: String,
    pub retriever_top_k: usize,
    pub bm25_weight_alpha: f64,
    pub reranker_model: String,
    /// `None` keeps every retrieved candidate.
    pub reranker_top_k: Option<usize>,
    pub pruner_prompt: String,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            rewriter_prompt: OFF.into(),
            chunk_size: 256,
            chunk_overlap: 0,
            retriever_embedder: "emb-a".into(),
            retriever_top_k: 5,
            bm25_weight_alpha: 0.5,
            reranker_model: OFF.into(),
            reranker_top_k: None,
            pruner_prompt: OFF.into(),
        }
    }
}

fn numeric<T: std::str::FromStr>(dim: &str, label: &str) -> Result<T, PipelineError> {
    label
        .parse()
        .map_err(|_| SpaceError::NonNumericLabel { dim: dim.to_string(), value: label.to_string() }.into())
}

impl PipelineSettings {
    pub fn from_config(space: &SearchSpace, config: &PipelineConfig) -> Result<Self, PipelineError> {
        space.validate(config)?;
        let mut s = PipelineSettings::default();
        let get = |name: &str| space.label(config, name);
        if let Some(v) = get(dims::REWRITER_PROMPT) {
            s.rewriter_prompt = v.to_string();
        }
        if let Some(v) = get(dims::CHUNK_SIZE) {
            s.chunk_size = numeric(dims::CHUNK_SIZE, v)?;
        }
        if let Some(v) = get(dims::CHUNK_OVERLAP) {
            s.chunk_overlap = numeric(dims::CHUNK_OVERLAP, v)?;
        }
        if let Some(v) = get(dims::RETRIEVER_EMBEDDER) {
            s.retriever_embedder = v.to_string();
        }
        if let Some(v) = get(dims::RETRIEVER_TOP_K) {
            s.retriever_top_k = numeric(dims::RETRIEVER_TOP_K, v)?;
        }
        if let Some(v) = get(dims::BM25_WEIGHT_ALPHA) {
            s.bm25_weight_alpha = numeric(dims::BM25_WEIGHT_ALPHA, v)?;
        }
        if let Some(v) = get(dims::RERANKER_MODEL) {
            s.reranker_model = v.to_string();
        }
        if let Some(v) = get(dims::RERANKER_TOP_K) {
            s.reranker_top_k = Some(numeric(dims::RERANKER_TOP_K, v)?);
        }
        if let Some(v) = get(dims::PRUNER_PROMPT) {
            s.pruner_prompt = v.to_string();
        }
        if s.chunk_size == 0 || s.chunk_overlap >= s.chunk_size {
            return Err(PipelineError::Overlap { size: s.chunk_size, overlap: s.chunk_overlap });
        }
        if s.retriever_top_k == 0 || s.reranker_top_k == Some(0) {
            return Err(PipelineError::OutOfRange { dim: dims::RETRIEVER_TOP_K.into(), value: "0".into() });
        }
        if !(0.0..=1.0).contains(&s.bm25_weight_alpha) {
            return Err(PipelineError::OutOfRange { dim: dims::BM25_WEIGHT_ALPHA.into(), value: s.bm25_weight_alpha.to_string() });
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    /// Half-open range of whitespace tokens in the source document.
    pub token_span: (usize, usize),
}

/// Splits a document into windows of `size` whitespace tokens advancing by
/// `size - overlap`. A window fully inside the previous one is dropped.
pub fn chunk_document(doc: &CorpusDoc, size: usize, overlap: usize) -> Result<Vec<Chunk>, PipelineError> {
    if size == 0 || overlap >= size {
        return Err(PipelineError::Overlap { size, overlap });
    }
    let tokens: Vec<&str> = doc.text.split_whitespace().collect();
    let stride = size - overlap;
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let end = (start + size).min(tokens.len());
        let contained = chunks.last().is_some_and(|p| p.token_span.0 <= start && end <= p.token_span.1);
        if !contained {
            chunks.push(Chunk { doc_id: doc.id.clone(), index: chunks.len(), text: tokens[start..end].join(" "), token_span: (start, end) });
        }
        start += stride;
    }
    Ok(chunks)
}

/// Document frequencies and lengths over a chunked corpus.
#[derive(Debug, Clone)]
pub struct Bm25Stats {
    pub n: usize,
    pub avg_len: f64,
    pub df: HashMap<String, usize>,
}

impl Bm25Stats {
    pub fn build(chunk_tokens: &[Vec<String>]) -> Self {
        let mut df = HashMap::new();
        for toks in chunk_tokens {
            for t in toks.iter().collect::<BTreeSet<_>>() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let n = chunk_tokens.len();
        let total: usize = chunk_tokens.iter().map(Vec::len).sum();
        Bm25Stats { n, avg_len: if n == 0 { 0.0 } else { total as f64 / n as f64 }, df }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (self.n as f64 - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Okapi BM25 summed over the distinct query terms.
pub fn bm25_score(query_tokens: &[String], chunk_tokens: &[String], stats: &Bm25Stats) -> f64 {
    if chunk_tokens.is_empty() || stats.avg_len == 0.0 {
        return 0.0;
    }
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for t in chunk_tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * chunk_tokens.len() as f64 / stats.avg_len);
    query_tokens
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter_map(|q| {
            let f = *tf.get(q.as_str())? as f64;
            Some(stats.idf(q) * f * (BM25_K1 + 1.0) / (f + norm))
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub score: f64,
}

impl ScoredChunk {
    fn new(c: &Chunk, score: f64) -> Self {
        ScoredChunk { doc_id: c.doc_id.clone(), index: c.index, text: c.text.clone(), score }
    }
}

/// Score descending, then `(doc_id, index)` ascending.
pub fn rank_order(a: &ScoredChunk, b: &ScoredChunk) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)).then_with(|| a.index.cmp(&b.index))
}

/// Chunks, their retrieval tokens, BM25 statistics and embeddings for one
/// `(corpus, size, overlap, embedder)` combination.
#[derive(Debug)]
pub struct ChunkIndex {
    pub chunks: Vec<Chunk>,
    pub tokens: Vec<Vec<String>>,
    pub stats: Bm25Stats,
    /// `None` when the embedder failed; retrieval then uses BM25 alone.
    pub embeddings: Option<Vec<Vec<f64>>>,
    pub embed_failure: Option<String>,
}

impl ChunkIndex {
    pub fn build(corpus: &[CorpusDoc], size: usize, overlap: usize, embedder: &str, gateway: &Gateway) -> Result<Self, PipelineError> {
        let mut chunks = Vec::new();
        for doc in corpus {
            chunks.extend(chunk_document(doc, size, overlap)?);
        }
        let tokens: Vec<Vec<String>> = chunks.iter().map(|c| retrieval_tokens(&c.text)).collect();
        let stats = Bm25Stats::build(&tokens);
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let mut embeddings = Vec::with_capacity(texts.len());
        let mut embed_failure = None;
        for batch in texts.chunks(EMBED_BATCH) {
            match gateway.embed(embedder, batch) {
                Ok(v) => embeddings.extend(v),
                Err(e) => {
                    embed_failure = Some(format!("embedding chunks with {embedder}: {e}"));
                    break;
                }
            }
        }
        let embeddings = if embed_failure.is_none() { Some(embeddings) } else { None };
        Ok(ChunkIndex { chunks, tokens, stats, embeddings, embed_failure })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexKey {
    pub corpus_hash: String,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub embedder: String,
}

/// Shared chunk indexes. Lookups take a read lock; a missing entry is built
/// without holding the lock, so concurrent builders of one key may duplicate
/// work, and the first insert wins. Indexes whose embedding failed are not
/// cached.
#[derive(Debug, Default)]
pub struct IndexCache {
    map: RwLock<HashMap<IndexKey, Arc<ChunkIndex>>>,
}

impl IndexCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_build(&self, env: &Environment, settings: &PipelineSettings, gateway: &Gateway) -> Result<Arc<ChunkIndex>, PipelineError> {
        let key = IndexKey {
            corpus_hash: env.corpus_file_hash.clone(),
            chunk_size: settings.chunk_size,
            chunk_overlap: settings.chunk_overlap,
            embedder: settings.retriever_embedder.clone(),
        };
        if let Some(idx) = self.map.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(idx.clone());
        }
        let built = Arc::new(ChunkIndex::build(&env.corpus, settings.chunk_size, settings.chunk_overlap, &settings.retriever_embedder, gateway)?);
        if built.embed_failure.is_some() {
            return Ok(built);
        }
        let mut map = self.map.write().unwrap_or_else(|e| e.into_inner());
        Ok(map.entry(key).or_insert(built).clone())
    }
}

/// Returns the question unchanged when the rewriter is off or fails.
pub fn rewrite(prompt_id: &str, question: &str, gateway: &Gateway, failures: &mut Vec<String>) -> String {
    if prompt_id == OFF {
        return question.to_string();
    }
    let template = match get_prompt(ChatRole::Rewriter, prompt_id) {
        Ok(t) => t,
        Err(e) => {
            failures.push(format!("rewrite: {e}"));
            return question.to_string();
        }
    };
    match gateway.chat(ChatRole::Rewriter, template.text, question) {
        Ok(q) => q.trim().to_string(),
        Err(e) => {
            failures.push(format!("rewrite: {e}"));
            question.to_string()
        }
    }
}

/// Min-max normalizes in place; a constant list becomes all 0.5.
fn min_max(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in values.iter_mut() {
        *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.5 };
    }
}

/// Interpolates normalized BM25 and mapped cosine by `alpha` and keeps the
/// top `k`. If embeddings are unavailable the ranking uses BM25 alone.
pub fn hybrid_retrieve(query: &str, index: &ChunkIndex, alpha: f64, k: usize, embedder: &str, gateway: &Gateway, failures: &mut Vec<String>) -> Vec<ScoredChunk> {
    let q_tokens = retrieval_tokens(query);
    let mut bm25: Vec<f64> = index.tokens.iter().map(|t| bm25_score(&q_tokens, t, &index.stats)).collect();
    min_max(&mut bm25);
    let mut alpha = alpha;
    let mut cos = vec![0.5; index.chunks.len()];
    if alpha < 1.0 && !index.chunks.is_empty() {
        let dense = match &index.embeddings {
            None => Err(index.embed_failure.clone().unwrap_or_else(|| "embeddings unavailable".into())),
            Some(chunk_vecs) => gateway
                .embed(embedder, &[query.to_string()])
                .map(|mut v| (v.remove(0), chunk_vecs))
                .map_err(|e| format!("embedding query with {embedder}: {e}")),
        };
        match dense {
            Ok((qv, chunk_vecs)) => {
                for (c, v) in cos.iter_mut().zip(chunk_vecs) {
                    *c = (crate::metrics::cosine(&qv, v) + 1.0) / 2.0;
                }
            }
            Err(msg) => {
                failures.push(format!("retrieve: {msg}; using BM25 only"));
                alpha = 1.0;
            }
        }
    }
    let mut scored: Vec<ScoredChunk> = index
        .chunks
        .iter()
        .zip(bm25.iter().zip(&cos))
        .map(|(c, (b, s))| ScoredChunk::new(c, alpha * b + (1.0 - alpha) * s))
        .collect();
    scored.sort_by(rank_order);
    scored.truncate(k);
    scored
}

/// Query-recall: share of distinct query tokens present in the text.
fn query_recall(query: &str, text: &str) -> f64 {
    let q: BTreeSet<String> = retrieval_tokens(query).into_iter().collect();
    if q.is_empty() {
        return 0.0;
    }
    let t: BTreeSet<String> = retrieval_tokens(text).into_iter().collect();
    q.intersection(&t).count() as f64 / q.len() as f64
}

/// Re-scores candidates and keeps the top `k`. `off` keeps retrieval order.
/// `rr-a` scores token-F1 between query and chunk, `rr-b` query-token recall;
/// a reranker registered on the gateway under the label takes precedence.
pub fn rerank(query: &str, candidates: &[ScoredChunk], model: &str, k: usize, gateway: &Gateway, failures: &mut Vec<String>) -> Vec<ScoredChunk> {
    let keep_order = |c: &[ScoredChunk]| c.iter().take(k).cloned().collect::<Vec<_>>();
    if model == OFF || candidates.is_empty() {
        return keep_order(candidates);
    }
    let scores: Result<Vec<f64>, String> = if let Some(p) = gateway.reranker(model) {
        let docs: Vec<String> = candidates.iter().map(|c| c.text.clone()).collect();
        p.score(query, &docs).map_err(|e| e.to_string()).and_then(|s| {
            if s.len() == docs.len() {
                Ok(s)
            } else {
                Err(format!("{} scores for {} candidates", s.len(), docs.len()))
            }
        })
    } else {
        match model {
            "rr-a" => Ok(candidates.iter().map(|c| token_f1(query, &c.text)).collect()),
            "rr-b" => Ok(candidates.iter().map(|c| query_recall(query, &c.text)).collect()),
            other => Err(format!("no reranker registered for `{other}`")),
        }
    };
    match scores {
        Ok(scores) => {
            let mut out: Vec<ScoredChunk> = candidates.iter().zip(scores).map(|(c, s)| ScoredChunk { score: s, ..c.clone() }).collect();
            out.sort_by(rank_order);
            out.truncate(k);
            out
        }
        Err(msg) => {
            failures.push(format!("rerank: {msg}; keeping retrieval order"));
            keep_order(candidates)
        }
    }
}

pub fn concat_context(chunks: &[ScoredChunk]) -> String {
    chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n\n")
}

/// Condenses the reranked context. `off`, or a failed call, yields the plain
/// concatenation; an empty list yields an empty context without a call.
pub fn prune(query: &str, reranked: &[ScoredChunk], prompt_id: &str, gateway: &Gateway, failures: &mut Vec<String>) -> String {
    let joined = concat_context(reranked);
    if reranked.is_empty() || prompt_id == OFF {
        return joined;
    }
    let template = match get_prompt(ChatRole::Pruner, prompt_id) {
        Ok(t) => t,
        Err(e) => {
            failures.push(format!("prune: {e}"));
            return joined;
        }
    };
    match gateway.chat(ChatRole::Pruner, template.text, &context_message(query, &joined)) {
        Ok(text) => text.trim().to_string(),
        Err(e) => {
            failures.push(format!("prune: {e}; using full context"));
            joined
        }
    }
}

/// Answers from the context; a failed call yields an empty answer.
pub fn generate(question: &str, context: &str, gateway: &Gateway, failures: &mut Vec<String>) -> String {
    let template = get_prompt(ChatRole::Generator, FIXED).expect("generator template is registered");
    match gateway.chat(ChatRole::Generator, template.text, &context_message(question, context)) {
        Ok(a) => a.trim().to_string(),
        Err(e) => {
            failures.push(format!("generate: {e}"));
            String::new()
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub rewrite: f64,
    pub index: f64,
    pub retrieve: f64,
    pub rerank: f64,
    pub prune: f64,
    pub generate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub question_id: String,
    pub original_query: String,
    pub rewritten_query: String,
    pub retrieved: Vec<ScoredChunk>,
    pub reranked: Vec<ScoredChunk>,
    pub pruned_context: String,
    pub answer: String,
    pub stage_timings: StageTimings,
    pub failures: Vec<String>,
    /// Set when the pipeline could not run at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fatal: Option<String>,
}

impl PipelineTrace {
    fn empty(item: &QAItem) -> Self {
        PipelineTrace {
            question_id: item.id.clone(),
            original_query: item.question.clone(),
            rewritten_query: item.question.clone(),
            retrieved: Vec::new(),
            reranked: Vec::new(),
            pruned_context: String::new(),
            answer: String::new(),
            stage_timings: StageTimings::default(),
            failures: Vec::new(),
            fatal: None,
        }
    }

    pub fn fatal(item: &QAItem, message: String) -> Self {
        PipelineTrace { fatal: Some(message), ..Self::empty(item) }
    }

    /// The trace with timings zeroed, for byte-level comparisons.
    pub fn without_timings(&self) -> Self {
        PipelineTrace { stage_timings: StageTimings::default(), ..self.clone() }
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *slot = t.elapsed().as_secs_f64();
    out
}

pub fn run_pipeline(space: &SearchSpace, config: &PipelineConfig, item: &QAItem, env: &Environment, gateway: &Gateway, cache: &IndexCache) -> PipelineTrace {
    let settings = match PipelineSettings::from_config(space, config) {
        Ok(s) => s,
        Err(e) => return PipelineTrace::fatal(item, e.to_string()),
    };
    run_with_settings(&settings, item, env, gateway, cache)
}

pub fn run_with_settings(s: &PipelineSettings, item: &QAItem, env: &Environment, gateway: &Gateway, cache: &IndexCache) -> PipelineTrace {
    let mut trace = PipelineTrace::empty(item);
    let mut times = StageTimings::default();
    let mut failures = Vec::new();
    trace.rewritten_query = timed(&mut times.rewrite, || rewrite(&s.rewriter_prompt, &item.question, gateway, &mut failures));
    let index = match timed(&mut times.index, || cache.get_or_build(env, s, gateway)) {
        Ok(i) => i,
        Err(e) => return PipelineTrace::fatal(item, e.to_string()),
    };
    let q = trace.rewritten_query.clone();
    trace.retrieved = timed(&mut times.retrieve, || {
        hybrid_retrieve(&q, &index, s.bm25_weight_alpha, s.retriever_top_k, &s.retriever_embedder, gateway, &mut failures)
    });
    let k_rerank = s.reranker_top_k.unwrap_or(s.retriever_top_k);
    trace.reranked = timed(&mut times.rerank, || rerank(&q, &trace.retrieved, &s.reranker_model, k_rerank, gateway, &mut failures));
    trace.pruned_context = timed(&mut times.prune, || prune(&q, &trace.reranked, &s.pruner_prompt, gateway, &mut failures));
    trace.answer = timed(&mut times.generate, || generate(&item.question, &trace.pruned_context, gateway, &mut failures));
    trace.stage_timings = times;
    trace.failures = failures;
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EmbedProvider, Fault, FaultChat, MockChat, ProviderFailure};
    use crate::search_space::default_text_space;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> CorpusDoc {
        CorpusDoc { id: id.into(), text: text.into(), image_path: None }
    }

    fn numbered(n: usize) -> CorpusDoc {
        doc("d", &(0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" "))
    }

    fn spans(c: &[Chunk]) -> Vec<(usize, usize)> {
        c.iter().map(|c| c.token_span).collect()
    }

    #[test]
    fn chunking_examples() {
        assert_eq!(spans(&chunk_document(&numbered(10), 4, 0).unwrap()), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(spans(&chunk_document(&numbered(10), 4, 2).unwrap()), vec![(0, 4), (2, 6), (4, 8), (6, 10)]);
        let one = chunk_document(&numbered(3), 256, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].text, "t0 t1 t2");
        assert!(matches!(chunk_document(&numbered(3), 4, 4), Err(PipelineError::Overlap { size: 4, overlap: 4 })));
        assert!(chunk_document(&doc("e", "   "), 4, 0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn chunk_spans_cover_the_document(n in 0usize..200, size in 1usize..40, overlap_frac in 0.0f64..1.0) {
            let overlap = ((size as f64) * overlap_frac) as usize % size;
            let chunks = chunk_document(&numbered(n), size, overlap).unwrap();
            let stride = size - overlap;
            let mut covered = vec![false; n];
            for (i, c) in chunks.iter().enumerate() {
                let (s, e) = c.token_span;
                prop_assert!(e - s <= size && e <= n && s < e);
                prop_assert_eq!(s % stride, 0);
                prop_assert_eq!(c.index, i);
                if i > 0 {
                    prop_assert!(s > chunks[i - 1].token_span.0);
                    prop_assert!(e > chunks[i - 1].token_span.1);
                }
                covered[s..e].iter_mut().for_each(|x| *x = true);
            }
            prop_assert!(covered.iter().all(|&x| x));
        }
    }

    fn toks(s: &str) -> Vec<String> {
        retrieval_tokens(s)
    }

    #[test]
    fn bm25_matches_hand_calculation() {
        let chunks = vec![toks("apple banana"), toks("cherry date elder")];
        let stats = Bm25Stats::build(&chunks);
        // straight-line evaluation for the query "apple" against chunk 0
        let n = 2.0;
        let df = 1.0;
        let idf = (1.0f64 + (n - df + 0.5) / (df + 0.5)).ln();
        let avg = 2.5;
        let tf = 1.0;
        let expected = idf * tf * 2.2 / (tf + 1.2 * (1.0 - 0.75 + 0.75 * 2.0 / avg));
        assert!((bm25_score(&toks("apple"), &chunks[0], &stats) - expected).abs() < 1e-12);
        assert_eq!(bm25_score(&toks("zebra"), &chunks[0], &stats), 0.0);
    }

    #[test]
    fn bm25_penalizes_padding() {
        let base = toks("apple banana");
        let padded = toks("apple banana filler filler filler filler");
        let stats = Bm25Stats::build(&[base.clone(), padded.clone(), toks("other words here")]);
        let q = toks("apple");
        assert!(bm25_score(&q, &padded, &stats) < bm25_score(&q, &base, &stats));
    }

    fn env_of(docs: Vec<CorpusDoc>, qa: Vec<QAItem>) -> Environment {
        Environment::from_records("t", qa, docs).unwrap()
    }

    fn qa(id: &str, q: &str, a: &str) -> QAItem {
        QAItem { id: id.into(), question: q.into(), references: vec![a.into()] }
    }

    fn small_corpus() -> Vec<CorpusDoc> {
        vec![
            doc("a", "Paris is the capital of France."),
            doc("b", "Berlin is the capital of Germany."),
            doc("c", "The Nile is a river in Africa."),
            doc("d", "Mount Everest is the highest mountain."),
            doc("e", "France exports wine and cheese."),
            doc("f", "Rome is in Italy."),
            doc("g", "The capital city hosts the government."),
        ]
    }

    fn index(alpha_label: &str) -> (Arc<ChunkIndex>, Gateway) {
        let g = Gateway::mock();
        let env = env_of(small_corpus(), vec![qa("1", "q", "a")]);
        let s = PipelineSettings { retriever_embedder: alpha_label.into(), ..PipelineSettings::default() };
        (IndexCache::new().get_or_build(&env, &s, &g).unwrap(), g)
    }

    #[test]
    fn alpha_one_ranks_like_bm25_and_zero_like_cosine() {
        let (idx, g) = index("emb-a");
        let q = "capital of France";
        let mut f = Vec::new();
        let hybrid: Vec<_> = hybrid_retrieve(q, &idx, 1.0, 50, "emb-a", &g, &mut f).iter().map(|c| c.doc_id.clone()).collect();
        let qt = toks(q);
        let mut pure: Vec<ScoredChunk> = idx.chunks.iter().zip(&idx.tokens).map(|(c, t)| ScoredChunk::new(c, bm25_score(&qt, t, &idx.stats))).collect();
        pure.sort_by(rank_order);
        assert_eq!(hybrid, pure.iter().map(|c| c.doc_id.clone()).collect::<Vec<_>>());

        let dense: Vec<_> = hybrid_retrieve(q, &idx, 0.0, 50, "emb-a", &g, &mut f).iter().map(|c| c.doc_id.clone()).collect();
        let qv = g.embed("emb-a", &[q.to_string()]).unwrap().remove(0);
        let mut pure: Vec<ScoredChunk> = idx
            .chunks
            .iter()
            .zip(idx.embeddings.as_ref().unwrap())
            .map(|(c, v)| ScoredChunk::new(c, crate::metrics::cosine(&qv, v)))
            .collect();
        pure.sort_by(rank_order);
        assert_eq!(dense, pure.iter().map(|c| c.doc_id.clone()).collect::<Vec<_>>());
        assert!(f.is_empty());
    }

    #[test]
    fn retrieval_scores_are_bounded_and_k_is_capped() {
        let (idx, g) = index("emb-b");
        let mut f = Vec::new();
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let r = hybrid_retrieve("river in Africa", &idx, alpha, 50, "emb-b", &g, &mut f);
            assert_eq!(r.len(), 7);
            assert!(r.iter().all(|c| (0.0..=1.0).contains(&c.score)));
            assert!(r.windows(2).all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater));
        }
        assert_eq!(hybrid_retrieve("x", &idx, 0.5, 3, "emb-b", &g, &mut f).len(), 3);
    }

    struct BrokenEmbedder;
    impl EmbedProvider for BrokenEmbedder {
        fn id(&self) -> String {
            "broken".into()
        }
        fn embed(&self, _: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
            Err(ProviderFailure::Timeout("down".into()))
        }
    }

    #[test]
    fn embedder_failure_falls_back_to_bm25() {
        let g = Gateway::mock().with_embedder("emb-a", Arc::new(BrokenEmbedder));
        let env = env_of(small_corpus(), vec![qa("1", "q", "a")]);
        let cache = IndexCache::new();
        let idx = cache.get_or_build(&env, &PipelineSettings::default(), &g).unwrap();
        assert!(idx.embeddings.is_none());
        assert!(cache.is_empty());
        let mut f = Vec::new();
        let r = hybrid_retrieve("capital of France", &idx, 0.5, 3, "emb-a", &g, &mut f);
        assert_eq!(r[0].doc_id, "a");
        assert_eq!(f.len(), 1);
    }

    fn cand(texts: &[&str]) -> Vec<ScoredChunk> {
        texts.iter().enumerate().map(|(i, t)| ScoredChunk { doc_id: format!("d{i}"), index: 0, text: t.to_string(), score: 1.0 - i as f64 * 0.1 }).collect()
    }

    #[test]
    fn rerank_rules() {
        let g = Gateway::mock();
        let mut f = Vec::new();
        let c = cand(&["a", "b", "c", "d", "e"]);
        assert_eq!(rerank("q", &c, OFF, 3, &g, &mut f), c[..3].to_vec());
        let c = cand(&["one two", "alpha beta gamma", "three"]);
        assert_eq!(rerank("alpha beta gamma", &c, "rr-a", 10, &g, &mut f)[0].text, "alpha beta gamma");
        assert_eq!(rerank("alpha beta gamma", &c, "rr-b", 10, &g, &mut f).len(), 3);
        assert!(f.is_empty());
        let r = rerank("q", &c, "rr-unknown", 2, &g, &mut f);
        assert_eq!(r, c[..2].to_vec());
        assert_eq!(f.len(), 1);
    }

    proptest! {
        #[test]
        fn rerank_returns_a_sub_multiset(texts in prop::collection::vec("[a-d ]{0,12}", 0..8), k in 1usize..10, model in prop::sample::select(vec!["off", "rr-a", "rr-b"])) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let c = cand(&refs);
            let out = rerank("a b", &c, model, k, &Gateway::mock(), &mut Vec::new());
            prop_assert!(out.len() <= k.min(c.len()));
            let mut pool: Vec<(String, usize, String)> = c.iter().map(|x| (x.doc_id.clone(), x.index, x.text.clone())).collect();
            for o in &out {
                let pos = pool.iter().position(|p| p.0 == o.doc_id && p.1 == o.index && p.2 == o.text);
                prop_assert!(pos.is_some());
                pool.remove(pos.unwrap());
            }
        }
    }

    #[test]
    fn prune_rules() {
        let g = Gateway::mock();
        let mut f = Vec::new();
        assert_eq!(prune("q", &cand(&["A", "B"]), OFF, &g, &mut f), "A\n\nB");
        let c = cand(&["Cats sleep a lot. Volcanoes erupt lava."]);
        let out = prune("Why do volcanoes matter?", &c, "P1", &g, &mut f);
        assert!(out.contains("Volcanoes erupt lava."));
        assert!(!out.contains("Cats"));
        let calls = Arc::new(FaultChat::new(Arc::new(MockChat), Fault::Timeout));
        let counting = Gateway::mock().with_chat(calls.clone());
        assert_eq!(prune("q", &[], "P2", &counting, &mut f), "");
        assert_eq!(calls.calls(), 0);
        assert!(f.is_empty());
    }

    #[test]
    fn stage_failures_degrade() {
        let g = Gateway::mock().with_chat(Arc::new(FaultChat::new(Arc::new(MockChat), Fault::Timeout)));
        let mut f = Vec::new();
        assert_eq!(rewrite("P2", "who?", &g, &mut f), "who?");
        assert_eq!(f.len(), 1);
        assert_eq!(prune("q", &cand(&["A", "B"]), "P1", &g, &mut f), "A\n\nB");
        assert_eq!(generate("q", "Some context.", &g, &mut f), "");
        assert_eq!(f.len(), 3);
        let ok = Gateway::mock();
        assert_eq!(rewrite(OFF, "who?", &ok, &mut f), "who?");
        assert_eq!(rewrite("P2", "who?", &ok, &mut f), "who?");
        assert_eq!(generate("q", "", &ok, &mut f), "");
    }

    #[test]
    fn generate_returns_reference_sentence() {
        let g = Gateway::mock();
        let ctx = "Rome is old.\n\nParis is the capital of France.";
        assert_eq!(generate("What is the capital of France?", ctx, &g, &mut Vec::new()), "Paris is the capital of France.");
    }

    fn all_off(space: &SearchSpace) -> PipelineConfig {
        space
            .config_from_labels([
                (dims::REWRITER_PROMPT, OFF),
                (dims::CHUNK_SIZE, "256"),
                (dims::CHUNK_OVERLAP, "0"),
                (dims::RETRIEVER_EMBEDDER, "emb-a"),
                (dims::RETRIEVER_TOP_K, "3"),
                (dims::BM25_WEIGHT_ALPHA, "0.5"),
                (dims::RERANKER_MODEL, OFF),
                (dims::RERANKER_TOP_K, "50"),
                (dims::PRUNER_PROMPT, OFF),
            ])
            .unwrap()
    }

    #[test]
    fn all_off_pipeline_composes_mock_contracts() {
        let space = default_text_space();
        let config = all_off(&space);
        let item = qa("1", "What is the capital of France?", "Paris");
        let env = env_of(small_corpus(), vec![item.clone()]);
        let g = Gateway::mock();
        let cache = IndexCache::new();
        let t = run_pipeline(&space, &config, &item, &env, &g, &cache);
        assert!(t.failures.is_empty(), "{:?}", t.failures);
        assert_eq!(t.retrieved.len(), 3);
        assert_eq!(t.reranked, t.retrieved);
        assert_eq!(t.pruned_context, concat_context(&t.retrieved));
        assert_eq!(t.answer, generate(&item.question, &t.pruned_context, &g, &mut Vec::new()));
        assert_eq!(t.answer, "Paris is the capital of France.");
        let again = run_pipeline(&space, &config, &item, &env, &g, &cache);
        assert_eq!(serde_json::to_vec(&again.without_timings()).unwrap(), serde_json::to_vec(&t.without_timings()).unwrap());
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn tiny_corpus_yields_single_chunk() {
        let space = default_text_space();
        let config = all_off(&space);
        let item = qa("1", "anything", "x");
        let env = env_of(vec![doc("only", "short doc here")], vec![item.clone()]);
        let t = run_pipeline(&space, &config, &item, &env, &Gateway::mock(), &IndexCache::new());
        assert_eq!(t.retrieved.len(), 1);
        assert_eq!(t.retrieved[0].text, "short doc here");
    }

    #[test]
    fn settings_defaults_fill_missing_dimensions() {
        let space = SearchSpace::new(vec![crate::search_space::Dimension::new(dims::RETRIEVER_TOP_K, crate::search_space::ModuleTag::Retriever, ["2", "4"])], vec![]).unwrap();
        let s = PipelineSettings::from_config(&space, &space.config(vec![1]).unwrap()).unwrap();
        assert_eq!(s.retriever_top_k, 4);
        assert_eq!(s.chunk_size, 256);
        assert_eq!(s.reranker_top_k, None);
        let bad = SearchSpace::new(vec![crate::search_space::Dimension::new(dims::CHUNK_SIZE, crate::search_space::ModuleTag::Chunker, ["big"])], vec![]).unwrap();
        assert!(matches!(PipelineSettings::from_config(&bad, &bad.config(vec![0]).unwrap()), Err(PipelineError::Space(SpaceError::NonNumericLabel { .. }))));
    }
}
