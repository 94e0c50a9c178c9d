//! HTTP backends speaking the common chat-completions / embeddings / rerank
//! JSON shapes. Provider-specific details are limited to the base URL, model
//! name and the environment variable holding the bearer token.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    EmbeddingBackend, GatewayError, Generation, GenerationBackend, GenerationRequest, ResponseHint,
    ScoringBackend, Usage,
};

/// Connection settings shared by the HTTP backends.
pub struct HttpEndpoint {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    /// Minimum spacing between requests (request-rate ceiling).
    pub min_interval: Duration,
    allow_network: bool,
    last_call: Mutex<Option<Instant>>,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let timeout = Duration::from_secs(60);
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key_env: None,
            timeout,
            min_interval: Duration::ZERO,
            allow_network: true,
            last_call: Mutex::new(None),
            agent: build_agent(timeout),
        }
    }

    pub fn api_key_env(mut self, var: impl Into<String>) -> Self {
        self.api_key_env = Some(var.into());
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self.agent = build_agent(timeout);
        self
    }

    pub fn max_requests_per_second(mut self, rps: f64) -> Self {
        if rps > 0.0 {
            self.min_interval = Duration::from_secs_f64(1.0 / rps);
        }
        self
    }

    /// Refuses every request with [`GatewayError::NoNetwork`].
    pub fn offline(mut self) -> Self {
        self.allow_network = false;
        self
    }

    fn throttle(&self) {
        let mut last = self.last_call.lock().expect("rate limiter lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, path: &str, body: &Value) -> Result<(Value, f64), GatewayError> {
        if !self.allow_network {
            return Err(GatewayError::NoNetwork {
                backend: self.base_url.clone(),
            });
        }
        self.throttle();
        let url = format!("{}/{}", self.base_url, path);
        let mut req = self.agent.post(&url);
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| GatewayError::Provider {
                status: None,
                message: format!("environment variable {var} is not set"),
            })?;
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let started = Instant::now();
        let mut resp = req
            .send_json(body)
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let payload: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let elapsed = started.elapsed().as_secs_f64();
        if !(200..300).contains(&status) {
            return Err(GatewayError::Provider {
                status: Some(status),
                message: payload
                    .pointer("/error/message")
                    .and_then(Value::as_str)
                    .map_or_else(|| payload.to_string(), str::to_string),
            });
        }
        Ok((payload, elapsed))
    }
}

fn build_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn malformed(what: &str) -> GatewayError {
    GatewayError::Provider {
        status: Some(200),
        message: format!("malformed response: missing {what}"),
    }
}

fn usage_from(payload: &Value, elapsed: f64) -> Usage {
    Usage {
        in_tokens: payload
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        out_tokens: payload
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        wall_time: elapsed,
    }
}

/// `POST {base}/chat/completions`.
pub struct HttpGenerator {
    endpoint: HttpEndpoint,
}

impl HttpGenerator {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

impl GenerationBackend for HttpGenerator {
    fn name(&self) -> &str {
        &self.endpoint.model
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Generation, GatewayError> {
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if req.response_hint == ResponseHint::SchemaConstrained {
            body["response_format"] = json!({"type": "json_object"});
        }
        let (payload, elapsed) = self.endpoint.post("chat/completions", &body)?;
        let text = payload
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("choices[0].message.content"))?
            .to_string();
        Ok(Generation {
            text,
            usage: usage_from(&payload, elapsed),
        })
    }
}

/// `POST {base}/embeddings`.
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    dim: usize,
    max_batch: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint, dim: usize) -> Self {
        Self {
            endpoint,
            dim,
            max_batch: 64,
        }
    }

    pub fn max_batch(mut self, n: usize) -> Self {
        self.max_batch = n.max(1);
        self
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn name(&self) -> &str {
        &self.endpoint.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn embed(&self, texts: &[String]) -> Result<(Vec<Vec<f64>>, Usage), GatewayError> {
        let body = json!({"model": self.endpoint.model, "input": texts});
        let (payload, elapsed) = self.endpoint.post("embeddings", &body)?;
        let data = payload["data"]
            .as_array()
            .ok_or_else(|| malformed("data"))?;
        let mut rows: Vec<(usize, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let idx = item["index"].as_u64().map_or(i, |x| x as usize);
                let v = item["embedding"]
                    .as_array()
                    .ok_or_else(|| malformed("data[].embedding"))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| malformed("numeric embedding")))
                    .collect::<Result<Vec<f64>, _>>()?;
                Ok((idx, v))
            })
            .collect::<Result<_, GatewayError>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok((
            rows.into_iter().map(|(_, v)| v).collect(),
            usage_from(&payload, elapsed),
        ))
    }
}

/// `POST {base}/rerank` with `{model, query, documents}`, answered by
/// `{results: [{index, relevance_score}]}`.
pub struct HttpScorer {
    endpoint: HttpEndpoint,
}

impl HttpScorer {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

impl ScoringBackend for HttpScorer {
    fn name(&self) -> &str {
        &self.endpoint.model
    }

    fn score(&self, query: &str, passages: &[String]) -> Result<(Vec<f64>, Usage), GatewayError> {
        let body = json!({"model": self.endpoint.model, "query": query, "documents": passages});
        let (payload, elapsed) = self.endpoint.post("rerank", &body)?;
        let results = payload["results"]
            .as_array()
            .ok_or_else(|| malformed("results"))?;
        let mut scores = vec![f64::NEG_INFINITY; passages.len()];
        for r in results {
            let idx = r["index"]
                .as_u64()
                .ok_or_else(|| malformed("results[].index"))? as usize;
            let score = r["relevance_score"]
                .as_f64()
                .ok_or_else(|| malformed("results[].relevance_score"))?;
            if let Some(slot) = scores.get_mut(idx) {
                *slot = score;
            }
        }
        Ok((scores, usage_from(&payload, elapsed)))
    }
}
