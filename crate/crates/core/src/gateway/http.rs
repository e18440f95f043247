//! OpenAI-compatible HTTP providers (blocking).

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, EmbedProvider, ProviderFailure, RerankProvider};

/// Caps concurrent requests to one endpoint.
struct InFlight {
    limit: Option<usize>,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: Option<usize>) -> Self {
        InFlight { limit: limit.filter(|&n| n > 0), active: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(limit) = self.limit {
            while *n >= limit {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn post(client: &reqwest::blocking::Client, url: &str, key: &Option<String>, body: &Value, timeout: Duration) -> Result<Value, ProviderFailure> {
    let mut rb = client.post(url).timeout(timeout).json(body);
    if let Some(k) = key {
        rb = rb.bearer_auth(k);
    }
    let resp = rb.send().map_err(classify)?;
    let status = resp.status();
    if !status.is_success() {
        let text = resp.text().unwrap_or_default();
        return Err(ProviderFailure::Transport(format!("{url}: HTTP {status}: {}", text.chars().take(200).collect::<String>())));
    }
    resp.json::<Value>().map_err(|e| if e.is_timeout() { classify(e) } else { ProviderFailure::Malformed(e.to_string()) })
}

fn classify(e: reqwest::Error) -> ProviderFailure {
    if e.is_timeout() {
        ProviderFailure::Timeout(e.to_string())
    } else {
        ProviderFailure::Transport(e.to_string())
    }
}

fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().build().unwrap_or_else(|_| reqwest::blocking::Client::new())
}

pub struct HttpChat {
    url: String,
    model: String,
    key: Option<String>,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl HttpChat {
    pub fn new(base_url: &str, model: &str, key: Option<String>, max_in_flight: Option<usize>) -> Self {
        HttpChat {
            url: endpoint(base_url, "chat/completions"),
            model: model.to_string(),
            key,
            client: client(),
            in_flight: InFlight::new(max_in_flight),
        }
    }

    pub fn request_body(&self, req: &ChatRequest) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_content},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }
}

impl ChatProvider for HttpChat {
    fn id(&self) -> String {
        format!("http:{}@{}", self.model, self.url)
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderFailure> {
        let _permit = self.in_flight.acquire();
        let v = post(&self.client, &self.url, &self.key, &self.request_body(req), req.timeout)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderFailure::Malformed("missing choices[0].message.content".into()))
    }
}

pub struct HttpEmbedder {
    url: String,
    model: String,
    key: Option<String>,
    dim: Option<usize>,
    timeout: Duration,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model: &str, key: Option<String>, dim: Option<usize>, max_in_flight: Option<usize>, timeout: Duration) -> Self {
        HttpEmbedder {
            url: endpoint(base_url, "embeddings"),
            model: model.to_string(),
            key,
            dim,
            timeout,
            client: client(),
            in_flight: InFlight::new(max_in_flight),
        }
    }
}

/// Extracts `data[*].embedding`, ordered by each item's `index`.
fn parse_embeddings(v: &Value, expected: usize, dim: Option<usize>) -> Result<Vec<Vec<f64>>, ProviderFailure> {
    let data = v.get("data").and_then(Value::as_array).ok_or_else(|| ProviderFailure::Malformed("missing data array".into()))?;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let vec: Option<Vec<f64>> = item.get("embedding").and_then(Value::as_array).and_then(|a| a.iter().map(Value::as_f64).collect());
        let vec = vec.ok_or_else(|| ProviderFailure::Malformed(format!("item {pos} has no numeric embedding")))?;
        if dim.is_some_and(|d| d != vec.len()) {
            return Err(ProviderFailure::Malformed(format!("embedding length {} differs from configured dim", vec.len())));
        }
        *out.get_mut(idx).ok_or_else(|| ProviderFailure::Malformed(format!("index {idx} out of range")))? = Some(vec);
    }
    out.into_iter().enumerate().map(|(i, v)| v.ok_or_else(|| ProviderFailure::Malformed(format!("no embedding for input {i}")))).collect()
}

impl EmbedProvider for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}@{}", self.model, self.url)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        let _permit = self.in_flight.acquire();
        let body = json!({ "model": self.model, "input": texts });
        let v = post(&self.client, &self.url, &self.key, &body, self.timeout)?;
        parse_embeddings(&v, texts.len(), self.dim)
    }
}

/// Reranker speaking the common `/rerank` shape:
/// `{model, query, documents}` to `{results: [{index, relevance_score}]}`.
pub struct HttpReranker {
    url: String,
    model: String,
    key: Option<String>,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl HttpReranker {
    pub fn new(base_url: &str, model: &str, key: Option<String>, timeout: Duration) -> Self {
        HttpReranker { url: endpoint(base_url, "rerank"), model: model.to_string(), key, timeout, client: client() }
    }
}

impl RerankProvider for HttpReranker {
    fn id(&self) -> String {
        format!("http:{}@{}", self.model, self.url)
    }

    fn score(&self, query: &str, documents: &[String]) -> Result<Vec<f64>, ProviderFailure> {
        let body = json!({ "model": self.model, "query": query, "documents": documents });
        let v = post(&self.client, &self.url, &self.key, &body, self.timeout)?;
        let results = v.get("results").and_then(Value::as_array).ok_or_else(|| ProviderFailure::Malformed("missing results".into()))?;
        let mut scores = vec![None; documents.len()];
        for r in results {
            let i = r.get("index").and_then(Value::as_u64).ok_or_else(|| ProviderFailure::Malformed("result without index".into()))? as usize;
            let s = r.get("relevance_score").and_then(Value::as_f64).ok_or_else(|| ProviderFailure::Malformed("result without score".into()))?;
            *scores.get_mut(i).ok_or_else(|| ProviderFailure::Malformed(format!("index {i} out of range")))? = Some(s);
        }
        scores.into_iter().map(|s| s.ok_or_else(|| ProviderFailure::Malformed("missing score".into()))).collect()
    }
}
