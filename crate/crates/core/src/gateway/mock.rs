//! Deterministic providers for tests and offline runs.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::{parse_context_message, ChatProvider, ChatRequest, ChatRole, EmbedProvider, JudgeInput, ProviderFailure};
use crate::metrics::token_f1;
use crate::text::{fnv1a64, is_stopword, retrieval_tokens, split_sentences};

pub const EMBED_DIM: usize = 256;

const JUDGE_F1_THRESHOLD: f64 = 0.5;

/// Rule-based chat model.
///
/// * rewriter: returns the question unchanged
/// * pruner: keeps context sentences sharing a non-stopword with the question
/// * generator: returns the context sentence containing the most distinct
///   question tokens, earliest on ties
/// * judge: `{"score": 1}` when token-F1 against some reference is at least
///   0.5, else `{"score": 0}`
#[derive(Debug, Clone, Copy, Default)]
pub struct MockChat;

impl MockChat {
    fn prune(question: &str, context: &str) -> String {
        let keys: BTreeSet<String> = retrieval_tokens(question).into_iter().filter(|t| !is_stopword(t)).collect();
        split_sentences(context)
            .into_iter()
            .filter(|s| retrieval_tokens(s).iter().any(|t| keys.contains(t)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn generate(question: &str, context: &str) -> String {
        let keys: BTreeSet<String> = retrieval_tokens(question).into_iter().collect();
        let mut best: Option<(usize, String)> = None;
        for s in split_sentences(context) {
            let toks: BTreeSet<String> = retrieval_tokens(&s).into_iter().collect();
            let overlap = toks.intersection(&keys).count();
            if best.as_ref().is_none_or(|(b, _)| overlap > *b) {
                best = Some((overlap, s));
            }
        }
        best.map(|(_, s)| s).unwrap_or_default()
    }

    fn judge(user: &str) -> String {
        let Ok(input) = serde_json::from_str::<JudgeInput>(user) else {
            return String::new();
        };
        let f1 = input.references.iter().map(|r| token_f1(&input.answer, r)).fold(0.0, f64::max);
        let score = u8::from(f1 >= JUDGE_F1_THRESHOLD);
        serde_json::json!({ "score": score, "reason": format!("best token-F1 {f1:.3}") }).to_string()
    }
}

impl ChatProvider for MockChat {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderFailure> {
        Ok(match req.role {
            ChatRole::Rewriter => req.user_content.clone(),
            ChatRole::Pruner => match parse_context_message(&req.user_content) {
                Some((q, c)) => Self::prune(q, c),
                None => String::new(),
            },
            ChatRole::Generator => match parse_context_message(&req.user_content) {
                Some((q, c)) => Self::generate(q, c),
                None => String::new(),
            },
            ChatRole::Judge => Self::judge(&req.user_content),
        })
    }
}

/// Signed feature hashing of retrieval tokens into 256 dimensions, L2
/// normalized. Texts without tokens map to the first basis vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    label: String,
    salt: u64,
    bigrams: bool,
}

impl HashEmbedder {
    /// `emb-a` hashes unigrams; `emb-b` hashes unigrams and bigrams. Other
    /// labels hash unigrams under a label-derived salt.
    pub fn for_label(label: &str) -> Self {
        let (salt, bigrams) = match label {
            "emb-a" => (0, false),
            "emb-b" => (0, true),
            other => (fnv1a64(other.as_bytes()), false),
        };
        HashEmbedder { label: label.to_string(), salt, bigrams }
    }

    fn add(&self, v: &mut [f64], feature: &str) {
        let mut bytes = self.salt.to_le_bytes().to_vec();
        bytes.extend_from_slice(feature.as_bytes());
        let h = fnv1a64(&bytes);
        let slot = (h % EMBED_DIM as u64) as usize;
        v[slot] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let toks = retrieval_tokens(text);
        let mut v = vec![0.0; EMBED_DIM];
        for t in &toks {
            self.add(&mut v, t);
        }
        if self.bigrams {
            for w in toks.windows(2) {
                self.add(&mut v, &format!("{} {}", w[0], w[1]));
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbedProvider for HashEmbedder {
    fn id(&self) -> String {
        format!("hash{EMBED_DIM}:{}", self.label)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Timeout,
    Transport,
    Malformed,
    /// Succeeds with an empty string.
    Empty,
    /// Waits before delegating; if the wait reaches the request timeout the
    /// call fails with a timeout instead.
    Delay(Duration),
}

/// Wraps a chat provider and injects faults.
pub struct FaultChat {
    inner: Arc<dyn ChatProvider>,
    fault: Fault,
    role: Option<ChatRole>,
    first: Option<usize>,
    calls: AtomicUsize,
}

impl FaultChat {
    pub fn new(inner: Arc<dyn ChatProvider>, fault: Fault) -> Self {
        FaultChat { inner, fault, role: None, first: None, calls: AtomicUsize::new(0) }
    }

    /// Only inject for requests of this role.
    pub fn only(mut self, role: ChatRole) -> Self {
        self.role = Some(role);
        self
    }

    /// Only inject for the first `n` matching calls.
    pub fn first(mut self, n: usize) -> Self {
        self.first = Some(n);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for FaultChat {
    fn id(&self) -> String {
        format!("fault({:?})/{}", self.fault, self.inner.id())
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderFailure> {
        if self.role.is_some_and(|r| r != req.role) {
            return self.inner.complete(req);
        }
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.first.is_some_and(|k| n >= k) {
            return self.inner.complete(req);
        }
        match self.fault {
            Fault::Timeout => Err(ProviderFailure::Timeout(format!("injected after {:?}", req.timeout))),
            Fault::Transport => Err(ProviderFailure::Transport("injected".into())),
            Fault::Malformed => Err(ProviderFailure::Malformed("injected".into())),
            Fault::Empty => Ok(String::new()),
            Fault::Delay(d) => {
                if d >= req.timeout {
                    std::thread::sleep(req.timeout);
                    Err(ProviderFailure::Timeout(format!("no response within {:?}", req.timeout)))
                } else {
                    std::thread::sleep(d);
                    self.inner.complete(req)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{context_message, judge_message, Decoding};
    use crate::metrics::cosine;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn req(role: ChatRole, user: &str) -> ChatRequest {
        ChatRequest::new(role, "sys", user, &Decoding::default())
    }

    #[test]
    fn rewriter_is_identity() {
        assert_eq!(MockChat.complete(&req(ChatRole::Rewriter, "Who wrote it?")).unwrap(), "Who wrote it?");
    }

    #[test]
    fn generator_picks_max_overlap_sentence() {
        let ctx = "Berlin is large. Paris is the capital of France. France has wine.";
        let q = "What is the capital of France?";
        // overlap oracle: count distinct shared tokens per sentence
        let qt: BTreeSet<String> = retrieval_tokens(q).into_iter().collect();
        let sentences = split_sentences(ctx);
        let scores: Vec<usize> = sentences
            .iter()
            .map(|s| retrieval_tokens(s).into_iter().collect::<BTreeSet<_>>().intersection(&qt).count())
            .collect();
        let best = scores.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).unwrap().0;
        let out = MockChat.complete(&req(ChatRole::Generator, &context_message(q, ctx))).unwrap();
        assert_eq!(out, sentences[best]);
        assert_eq!(out, "Paris is the capital of France.");
    }

    #[test]
    fn generator_ties_go_to_the_earliest_sentence() {
        let out = MockChat.complete(&req(ChatRole::Generator, &context_message("red blue", "A red car. A blue car."))).unwrap();
        assert_eq!(out, "A red car.");
        let empty = MockChat.complete(&req(ChatRole::Generator, &context_message("q", ""))).unwrap();
        assert_eq!(empty, "");
    }

    #[test]
    fn pruner_keeps_sentences_sharing_a_content_word() {
        let ctx = "The sky is blue. Rivers flow to the sea.";
        let out = MockChat.complete(&req(ChatRole::Pruner, &context_message("Where do rivers go?", ctx))).unwrap();
        assert!(out.contains("Rivers flow to the sea."));
        assert!(!out.contains("sky"));
    }

    #[test]
    fn judge_thresholds_token_f1() {
        let hit = MockChat.complete(&req(ChatRole::Judge, &judge_message("q", &["Paris".into()], "paris"))).unwrap();
        assert_eq!(crate::metrics::parse_judge(&hit).score, 1);
        let miss = MockChat.complete(&req(ChatRole::Judge, &judge_message("q", &["Paris".into()], "Lyon"))).unwrap();
        let v = crate::metrics::parse_judge(&miss);
        assert_eq!((v.score, v.parse_failure), (0, false));
    }

    #[test]
    fn hash_embeddings_are_unit_and_deterministic() {
        for label in ["emb-a", "emb-b", "custom"] {
            let e = HashEmbedder::for_label(label);
            let a = e.embed_one("the quick brown fox");
            assert_eq!(a, e.embed_one("the quick brown fox"));
            assert!((a.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
            assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
            let empty = e.embed_one("  ... ");
            assert_eq!(empty[0], 1.0);
            assert_eq!(empty.iter().map(|x| x.abs()).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn disjoint_texts_have_small_cosine() {
        // 1,000 pairs of 8-token texts over disjoint vocabularies
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = HashEmbedder::for_label("emb-a");
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            let a: Vec<String> = (0..8).map(|_| format!("a{}", rng.random_range(0..5000))).collect();
            let b: Vec<String> = (0..8).map(|_| format!("b{}", rng.random_range(0..5000))).collect();
            let c = cosine(&e.embed_one(&a.join(" ")), &e.embed_one(&b.join(" ")));
            worst = worst.max(c.abs());
            assert!(c.abs() < 0.5, "pair {i}: cosine {c}");
        }
        assert!(worst > 0.0);
    }
}
