//! Single boundary to external model services: text embedding, text
//! generation (query fanout, hypothetical documents, the agent, the judge)
//! and query/passage pair scoring.
//!
//! Every backend has a deterministic offline substitute in [`mock`] so the
//! rest of the crate is testable without network access.

pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the unit-norm invariant of [`EmbeddingVector`].
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("text at index {index} is empty")]
    EmptyText { index: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend `{backend}` needs network access, which is disabled in this profile")]
    NoNetwork { backend: String },
    #[error("provider error (status {status:?}): {message}")]
    Provider {
        status: Option<u16>,
        message: String,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scripted backend has no response left")]
    ScriptExhausted,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Provider { status, .. } => match status {
                None => true,
                Some(s) => *s == 408 || *s == 429 || *s >= 500,
            },
            _ => false,
        }
    }

    /// Provider status carried by this error, looking through retries.
    pub fn status(&self) -> Option<u16> {
        match self {
            GatewayError::Provider { status, .. } => *status,
            GatewayError::Exhausted { last, .. } => last.status(),
            _ => None,
        }
    }
}

/// A unit-normalized dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm.
    pub fn normalize(values: Vec<f64>) -> Result<Self, GatewayError> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(GatewayError::ZeroVector);
        }
        if (norm - 1.0).abs() <= f64::EPSILON {
            return Ok(Self(values));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps values that must already be unit-norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, GatewayError> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(GatewayError::InvalidRequest(format!(
                "vector norm {norm} is not 1"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Arithmetic mean of equally sized vectors, without renormalization.
pub fn mean_vector(vectors: &[EmbeddingVector]) -> Vec<f64> {
    let Some(first) = vectors.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.dim()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.values()) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Which model a generation request is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    QueryGenerator,
    DocumentGenerator,
    Agent,
    Judge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseHint {
    #[default]
    FreeText,
    SchemaConstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role: ModelRole,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub response_hint: ResponseHint,
}

impl GenerationRequest {
    pub fn new(role: ModelRole, messages: Vec<Message>) -> Self {
        Self {
            role,
            messages,
            temperature: 0.0,
            max_tokens: 1024,
            response_hint: ResponseHint::FreeText,
        }
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn schema_constrained(mut self) -> Self {
        self.response_hint = ResponseHint::SchemaConstrained;
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "request has no messages".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Last user message, which carries the task payload for most prompts.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }

    pub fn system(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map_or("", |m| m.content.as_str())
    }
}

/// Token and time cost of one or more calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub in_tokens: u64,
    pub out_tokens: u64,
    /// Seconds reported by the backend. Mock backends report zero.
    pub wall_time: f64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.in_tokens += rhs.in_tokens;
        self.out_tokens += rhs.out_tokens;
        self.wall_time += rhs.wall_time;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub usage: Usage,
}

/// Monotone, thread-safe usage accumulator.
#[derive(Debug, Default)]
pub struct UsageMeter {
    in_tokens: AtomicU64,
    out_tokens: AtomicU64,
    wall_micros: AtomicU64,
    calls: AtomicU64,
}

impl UsageMeter {
    pub fn record(&self, u: &Usage) {
        self.in_tokens.fetch_add(u.in_tokens, Ordering::Relaxed);
        self.out_tokens.fetch_add(u.out_tokens, Ordering::Relaxed);
        self.wall_micros
            .fetch_add((u.wall_time * 1e6).round() as u64, Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> Usage {
        Usage {
            in_tokens: self.in_tokens.load(Ordering::Relaxed),
            out_tokens: self.out_tokens.load(Ordering::Relaxed),
            wall_time: self.wall_micros.load(Ordering::Relaxed) as f64 / 1e6,
        }
    }

    /// Number of metered calls (generation, embedding and scoring).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Largest batch the provider accepts in one request.
    fn max_batch(&self) -> usize {
        64
    }
    /// Raw (not necessarily normalized) vectors, one per text.
    fn embed(&self, texts: &[String]) -> Result<(Vec<Vec<f64>>, Usage), GatewayError>;
}

pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, req: &GenerationRequest) -> Result<Generation, GatewayError>;
}

pub trait ScoringBackend: Send + Sync {
    fn name(&self) -> &str;
    /// One relevance score per passage, higher is more relevant.
    fn score(&self, query: &str, passages: &[String]) -> Result<(Vec<f64>, Usage), GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 250,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            attempts: 1,
            base_delay_ms: 0,
        }
    }

    fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let attempts = self.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    let delay = self.base_delay_ms.saturating_mul(1 << (attempt - 1));
                    tracing::debug!(attempt, delay, error = %e, "retrying model call");
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::Exhausted {
                        attempts,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

pub const DEFAULT_RERANKER: &str = "cross_encoder";

/// Routes requests to per-role backends with retries and usage metering.
///
/// Cloning is cheap; clones share backends and meters.
#[derive(Clone)]
pub struct Gateway {
    embedder: Arc<dyn EmbeddingBackend>,
    default_generator: Arc<dyn GenerationBackend>,
    generators: BTreeMap<ModelRole, Arc<dyn GenerationBackend>>,
    rerankers: BTreeMap<String, Arc<dyn ScoringBackend>>,
    default_reranker: String,
    retry: RetryPolicy,
    meters: Vec<Arc<UsageMeter>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("embedder", &self.embedder.name())
            .field("default_generator", &self.default_generator.name())
            .field("rerankers", &self.rerankers.keys().collect::<Vec<_>>())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(embedder: Arc<dyn EmbeddingBackend>, generator: Arc<dyn GenerationBackend>) -> Self {
        Self {
            embedder,
            default_generator: generator,
            generators: BTreeMap::new(),
            rerankers: BTreeMap::new(),
            default_reranker: DEFAULT_RERANKER.to_string(),
            retry: RetryPolicy::default(),
            meters: vec![Arc::new(UsageMeter::default())],
        }
    }

    /// Fully offline gateway: hashed bag-of-words embedder (d=64), template
    /// generator, and the two overlap rerankers.
    pub fn mock() -> Self {
        Self::new(
            Arc::new(mock::HashEmbedder::new(mock::MOCK_DIM)),
            Arc::new(mock::TemplateGenerator),
        )
        .with_reranker(DEFAULT_RERANKER, Arc::new(mock::OverlapScorer))
        .with_reranker("bge", Arc::new(mock::NormalizedOverlapScorer))
        .with_retry(RetryPolicy::none())
    }

    pub fn with_role(mut self, role: ModelRole, backend: Arc<dyn GenerationBackend>) -> Self {
        self.generators.insert(role, backend);
        self
    }

    pub fn with_reranker(
        mut self,
        name: impl Into<String>,
        backend: Arc<dyn ScoringBackend>,
    ) -> Self {
        let name = name.into();
        if self.rerankers.is_empty() {
            self.default_reranker = name.clone();
        }
        self.rerankers.insert(name, backend);
        self
    }

    pub fn with_default_reranker(mut self, name: impl Into<String>) -> Self {
        self.default_reranker = name.into();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// A clone that additionally meters into `meter` (e.g. one per session).
    pub fn metered(&self, meter: Arc<UsageMeter>) -> Self {
        let mut g = self.clone();
        g.meters.push(meter);
        g
    }

    /// The gateway-wide meter.
    pub fn usage(&self) -> Usage {
        self.meters[0].snapshot()
    }

    pub fn meter(&self) -> &Arc<UsageMeter> {
        &self.meters[0]
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    pub fn reranker_names(&self) -> Vec<String> {
        self.rerankers.keys().cloned().collect()
    }

    pub fn default_reranker(&self) -> &str {
        &self.default_reranker
    }

    fn record(&self, usage: &Usage) {
        for m in &self.meters {
            m.record(usage);
        }
    }

    /// Embeds `texts` in provider-sized batches; output is aligned with the
    /// input and unit-normalized. Empty texts are rejected before dispatch.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if let Some(index) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyText { index });
        }
        let dim = self.embedder.dim();
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.embedder.max_batch().max(1)) {
            let (raw, usage) = self.retry.run(|| self.embedder.embed(batch))?;
            self.record(&usage);
            if raw.len() != batch.len() {
                return Err(GatewayError::Provider {
                    status: None,
                    message: format!("expected {} embeddings, got {}", batch.len(), raw.len()),
                });
            }
            for v in raw {
                if v.len() != dim {
                    return Err(GatewayError::Dimension {
                        expected: dim,
                        got: v.len(),
                    });
                }
                out.push(EmbeddingVector::normalize(v)?);
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<Generation, GatewayError> {
        req.validate()?;
        let backend = self
            .generators
            .get(&req.role)
            .unwrap_or(&self.default_generator);
        let generation = self.retry.run(|| backend.generate(req))?;
        self.record(&generation.usage);
        Ok(generation)
    }

    /// Scores passages against `query` with the default reranker.
    pub fn score_pairs(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, GatewayError> {
        let name = self.default_reranker.clone();
        self.score_pairs_with(&name, query, passages)
    }

    pub fn score_pairs_with(
        &self,
        reranker: &str,
        query: &str,
        passages: &[String],
    ) -> Result<Vec<f64>, GatewayError> {
        if passages.is_empty() {
            return Err(GatewayError::InvalidRequest("no passages to score".into()));
        }
        let backend = self.rerankers.get(reranker).ok_or_else(|| {
            GatewayError::InvalidRequest(format!("unknown reranker `{reranker}`"))
        })?;
        let (scores, usage) = self.retry.run(|| backend.score(query, passages))?;
        self.record(&usage);
        if scores.len() != passages.len() {
            return Err(GatewayError::Provider {
                status: None,
                message: format!("expected {} scores, got {}", passages.len(), scores.len()),
            });
        }
        Ok(scores)
    }
}

/// Rough token count used by mock backends and prompt budgeting.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
