//! Model inference behind provider traits.
//!
//! Chat completion, text embedding and (optionally) reranking are reached
//! only through [`Gateway`]. The mock chat provider and the hash embedder are
//! deterministic and need no network; the HTTP providers speak the
//! OpenAI-compatible wire format.

mod http;
mod mock;
mod prompts;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::{HttpChat, HttpEmbedder, HttpReranker};
pub use mock::{Fault, FaultChat, HashEmbedder, MockChat, EMBED_DIM};
pub use prompts::{get_prompt, templates, PromptTemplate, UnknownPrompt, FIXED};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DEFAULT_TIMEOUT_SECS: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    Rewriter,
    Pruner,
    Generator,
    Judge,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::Rewriter => "rewriter",
            ChatRole::Pruner => "pruner",
            ChatRole::Generator => "generator",
            ChatRole::Judge => "judge",
        }
    }
}

impl fmt::Display for ChatRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decoding parameters applied to every chat request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding { temperature: DEFAULT_TEMPERATURE, max_tokens: DEFAULT_MAX_TOKENS, timeout_secs: DEFAULT_TIMEOUT_SECS }
    }
}

impl Decoding {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role: ChatRole,
    pub system_prompt: String,
    pub user_content: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl ChatRequest {
    pub fn new(role: ChatRole, system_prompt: &str, user_content: &str, decoding: &Decoding) -> Self {
        ChatRequest {
            role,
            system_prompt: system_prompt.to_string(),
            user_content: user_content.to_string(),
            temperature: decoding.temperature,
            max_tokens: decoding.max_tokens,
            timeout: decoding.timeout(),
        }
    }
}

/// Why a provider call failed. Every failure has exactly one cause.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderFailure {
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ProviderFailure {
    pub fn cause(&self) -> &'static str {
        match self {
            ProviderFailure::Timeout(_) => "timeout",
            ProviderFailure::Transport(_) => "transport",
            ProviderFailure::Malformed(_) => "malformed",
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderFailure>;
}

pub trait EmbedProvider: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure>;
}

/// Scores each document's relevance to the query; higher is better.
pub trait RerankProvider: Send + Sync {
    fn id(&self) -> String;
    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderFailure>;
}

const QUESTION_PREFIX: &str = "Question: ";
const CONTEXT_SEPARATOR: &str = "\n\nContext:\n";

/// User message for stages that see both a question and a context.
pub fn context_message(question: &str, context: &str) -> String {
    format!("{QUESTION_PREFIX}{question}{CONTEXT_SEPARATOR}{context}")
}

pub fn parse_context_message(user: &str) -> Option<(&str, &str)> {
    user.strip_prefix(QUESTION_PREFIX)?.split_once(CONTEXT_SEPARATOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeInput {
    pub question: String,
    pub references: Vec<String>,
    pub answer: String,
}

pub fn judge_message(question: &str, references: &[String], answer: &str) -> String {
    serde_json::to_string(&JudgeInput { question: question.into(), references: references.to_vec(), answer: answer.into() })
        .expect("plain strings serialize")
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown embedder `{0}`")]
    UnknownEmbedder(String),
    #[error("gateway config: {0}")]
    Config(String),
    #[error("reading gateway config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing gateway config: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSettings {
    pub kind: ChatKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub key_env: Option<String>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSettings {
    pub kind: EmbedKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Per-label model overrides, e.g. `{"emb-a": "...", "emb-b": "..."}`.
    #[serde(default)]
    pub models: BTreeMap<String, String>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub key_env: Option<String>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankSettings {
    pub base_url: String,
    /// Reranker label to remote model name.
    pub models: BTreeMap<String, String>,
    #[serde(default)]
    pub key_env: Option<String>,
}

/// The gateway config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub chat: ChatSettings,
    pub embed: EmbedSettings,
    #[serde(default)]
    pub rerank: Option<RerankSettings>,
    #[serde(default)]
    pub decoding: Decoding,
}

impl GatewayConfig {
    pub fn mock() -> Self {
        GatewayConfig {
            chat: ChatSettings { kind: ChatKind::Mock, base_url: None, model: None, key_env: None, max_in_flight: None },
            embed: EmbedSettings {
                kind: EmbedKind::Hash,
                base_url: None,
                model: None,
                models: BTreeMap::new(),
                dim: None,
                key_env: None,
                max_in_flight: None,
            },
            rerank: None,
            decoding: Decoding::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn api_key(key_env: &Option<String>) -> Option<String> {
    key_env.as_ref().and_then(|k| std::env::var(k).ok())
}

/// Labels of the embedders in the built-in space; always registered.
pub const BUILTIN_EMBEDDERS: [&str; 2] = ["emb-a", "emb-b"];

#[derive(Clone)]
pub struct Gateway {
    chat: Arc<dyn ChatProvider>,
    embed_kind: EmbedKind,
    embedders: BTreeMap<String, Arc<dyn EmbedProvider>>,
    rerankers: BTreeMap<String, Arc<dyn RerankProvider>>,
    decoding: Decoding,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fingerprint())
    }
}

impl Gateway {
    /// Mock chat with hash embedders.
    pub fn mock() -> Self {
        Gateway::from_config(&GatewayConfig::mock()).expect("mock config is valid")
    }

    pub fn from_config(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        let chat: Arc<dyn ChatProvider> = match cfg.chat.kind {
            ChatKind::Mock => Arc::new(MockChat),
            ChatKind::Http => {
                let base = cfg.chat.base_url.clone().ok_or_else(|| GatewayError::Config("chat.base_url is required for http".into()))?;
                let model = cfg.chat.model.clone().ok_or_else(|| GatewayError::Config("chat.model is required for http".into()))?;
                Arc::new(HttpChat::new(&base, &model, api_key(&cfg.chat.key_env), cfg.chat.max_in_flight))
            }
        };
        let mut embedders: BTreeMap<String, Arc<dyn EmbedProvider>> = BTreeMap::new();
        match cfg.embed.kind {
            EmbedKind::Hash => {
                for label in BUILTIN_EMBEDDERS {
                    embedders.insert(label.to_string(), Arc::new(HashEmbedder::for_label(label)));
                }
            }
            EmbedKind::Http => {
                let base = cfg.embed.base_url.clone().ok_or_else(|| GatewayError::Config("embed.base_url is required for http".into()))?;
                let key = api_key(&cfg.embed.key_env);
                let mut models = cfg.embed.models.clone();
                if let Some(m) = &cfg.embed.model {
                    for label in BUILTIN_EMBEDDERS {
                        models.entry(label.to_string()).or_insert_with(|| m.clone());
                    }
                }
                if models.is_empty() {
                    return Err(GatewayError::Config("embed.model or embed.models is required for http".into()));
                }
                for (label, model) in models {
                    let p = HttpEmbedder::new(&base, &model, key.clone(), cfg.embed.dim, cfg.embed.max_in_flight, cfg.decoding.timeout());
                    embedders.insert(label, Arc::new(p));
                }
            }
        }
        let mut rerankers: BTreeMap<String, Arc<dyn RerankProvider>> = BTreeMap::new();
        if let Some(r) = &cfg.rerank {
            let key = api_key(&r.key_env);
            for (label, model) in &r.models {
                rerankers.insert(label.clone(), Arc::new(HttpReranker::new(&r.base_url, model, key.clone(), cfg.decoding.timeout())));
            }
        }
        Ok(Gateway { chat, embed_kind: cfg.embed.kind.clone(), embedders, rerankers, decoding: cfg.decoding })
    }

    pub fn with_chat(mut self, chat: Arc<dyn ChatProvider>) -> Self {
        self.chat = chat;
        self
    }

    pub fn with_embedder(mut self, label: &str, provider: Arc<dyn EmbedProvider>) -> Self {
        self.embedders.insert(label.to_string(), provider);
        self
    }

    pub fn with_reranker(mut self, label: &str, provider: Arc<dyn RerankProvider>) -> Self {
        self.rerankers.insert(label.to_string(), provider);
        self
    }

    pub fn decoding(&self) -> &Decoding {
        &self.decoding
    }

    /// Describes the providers; part of the evaluation-mode digest so cached
    /// rewards never cross backends.
    pub fn fingerprint(&self) -> String {
        let embed: Vec<String> = self.embedders.iter().map(|(l, p)| format!("{l}={}", p.id())).collect();
        let rerank: Vec<String> = self.rerankers.iter().map(|(l, p)| format!("{l}={}", p.id())).collect();
        format!(
            "chat={};embed=[{}];rerank=[{}];temperature={:?};max_tokens={};timeout={:?}",
            self.chat.id(),
            embed.join(","),
            rerank.join(","),
            self.decoding.temperature,
            self.decoding.max_tokens,
            self.decoding.timeout_secs
        )
    }

    /// Sends one chat request. Transport failures are retried once; timeouts
    /// are not. Blank responses are reported as malformed.
    pub fn chat(&self, role: ChatRole, system_prompt: &str, user_content: &str) -> Result<String, ProviderFailure> {
        let req = ChatRequest::new(role, system_prompt, user_content, &self.decoding);
        let out = match self.chat.complete(&req) {
            Err(ProviderFailure::Transport(first)) => {
                log::debug!("{role} transport failure ({first}); retrying once");
                self.chat.complete(&req)
            }
            other => other,
        }?;
        if out.trim().is_empty() {
            return Err(ProviderFailure::Malformed("empty response".into()));
        }
        Ok(out)
    }

    fn embedder(&self, label: &str) -> Result<Arc<dyn EmbedProvider>, GatewayError> {
        if let Some(p) = self.embedders.get(label) {
            return Ok(p.clone());
        }
        match self.embed_kind {
            // Custom spaces may name other embedders; give each its own hash salt.
            EmbedKind::Hash => Ok(Arc::new(HashEmbedder::for_label(label))),
            EmbedKind::Http => Err(GatewayError::UnknownEmbedder(label.to_string())),
        }
    }

    pub fn has_embedder(&self, label: &str) -> bool {
        self.embedder(label).is_ok()
    }

    pub fn embed(&self, label: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        let p = self.embedder(label).map_err(|e| ProviderFailure::Transport(e.to_string()))?;
        let out = match p.embed(texts) {
            Err(ProviderFailure::Transport(_)) => p.embed(texts),
            other => other,
        }?;
        if out.len() != texts.len() {
            return Err(ProviderFailure::Malformed(format!("{} vectors for {} texts", out.len(), texts.len())));
        }
        Ok(out)
    }

    /// Embedder used for token-level semantic recall.
    pub fn metric_embedder(&self) -> &str {
        BUILTIN_EMBEDDERS[0]
    }

    pub fn reranker(&self, label: &str) -> Option<Arc<dyn RerankProvider>> {
        self.rerankers.get(label).cloned()
    }
}
