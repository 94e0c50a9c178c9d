//! Deterministic offline backends. All of them are pure functions of their
//! inputs (the scripted generator is a pure function of its script), so
//! pipelines built on them are bit-reproducible.

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use super::{
    approx_tokens, EmbeddingBackend, GatewayError, Generation, GenerationBackend,
    GenerationRequest, ModelRole, ScoringBackend, Usage,
};
use crate::prompts;
use crate::text::{fnv1a, split_sentences, tokenize};

pub const MOCK_DIM: usize = 64;

fn mock_usage(req: &GenerationRequest, out: &str) -> Usage {
    Usage {
        in_tokens: req.messages.iter().map(|m| approx_tokens(&m.content)).sum(),
        out_tokens: approx_tokens(out),
        wall_time: 0.0,
    }
}

/// Hashed bag-of-tokens embedder: each token adds 1 to bucket
/// `fnv1a(token) % dim`. Texts without tokens hash their trimmed form.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn raw(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            v[self.bucket(text.trim())] += 1.0;
        }
        for t in tokens {
            v[self.bucket(&t)] += 1.0;
        }
        v
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn name(&self) -> &str {
        "mock-hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<(Vec<Vec<f64>>, Usage), GatewayError> {
        let usage = Usage {
            in_tokens: texts.iter().map(|t| approx_tokens(t)).sum(),
            ..Usage::default()
        };
        Ok((texts.iter().map(|t| self.raw(t)).collect(), usage))
    }
}

/// FIFO of canned responses, falling back to another backend (usually the
/// [`TemplateGenerator`]) once the script runs out. Every request is recorded.
pub struct ScriptedGenerator {
    queue: Mutex<VecDeque<String>>,
    fallback: Option<Arc<dyn GenerationBackend>>,
    requests: Mutex<Vec<GenerationRequest>>,
}

impl ScriptedGenerator {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(script.into_iter().map(Into::into).collect()),
            fallback: None,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn GenerationBackend>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn push(&self, response: impl Into<String>) {
        self.queue
            .lock()
            .expect("script lock")
            .push_back(response.into());
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script lock").len()
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.requests.lock().expect("script lock").clone()
    }
}

impl GenerationBackend for ScriptedGenerator {
    fn name(&self) -> &str {
        "mock-scripted"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Generation, GatewayError> {
        self.requests.lock().expect("script lock").push(req.clone());
        let next = self.queue.lock().expect("script lock").pop_front();
        match next {
            Some(text) => Ok(Generation {
                usage: mock_usage(req, &text),
                text,
            }),
            None => match &self.fallback {
                Some(f) => f.generate(req),
                None => Err(GatewayError::ScriptExhausted),
            },
        }
    }
}

/// Rule-based stand-in for every generation role. Output depends only on
/// the request, keyed off the prompt layouts in [`crate::prompts`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator;

impl TemplateGenerator {
    fn fanout(req: &GenerationRequest) -> String {
        let (q, n) = prompts::parse_question(req.last_user());
        let n = n.unwrap_or(3).max(1);
        let mut lines = vec![q.clone()];
        for i in 2..=n {
            lines.push(match i {
                2 => format!("Which figures and fiscal years are reported for: {q}"),
                3 => format!("What related disclosures in the same filing discuss: {q}"),
                _ => format!("Sub-question {i}: {q}"),
            });
        }
        lines.join("\n")
    }

    fn hypothetical(req: &GenerationRequest) -> String {
        let (q, _) = prompts::parse_question(req.last_user());
        let q = q.trim_end_matches('?');
        let has_digits = q.chars().any(|c| c.is_ascii_digit());
        if has_digits {
            format!("{q}. The annual report states the figures for these periods in its financial statements.")
        } else {
            format!("{q}. The annual report states this for fiscal year 2023 in its financial statements.")
        }
    }

    /// First turn: one web search if the tool is available; afterwards
    /// answer with the top chunk's sentence closest to the question.
    fn agent(req: &GenerationRequest) -> String {
        let history = req.last_user();
        let question = section_after(history, prompts::H_QUESTION).unwrap_or_default();
        let contexts = context_lines(history);
        let tool_seen = history.contains(prompts::H_TOOL);
        let has_search = req.system().contains("\n- web_search(");
        let plan = if !tool_seen && has_search && !question.is_empty() {
            json!({
                "thought": "Check the web for facts missing from the retrieved filings.",
                "tool_calls": [{"name": "web_search", "args": {"query": question, "top_n": 3}}],
                "audio": "",
                "plan": "1. search the web 2. answer from the filings and search results",
                "queries": [{"query": question, "answer": ""}],
            })
        } else {
            let audio = match contexts.first() {
                Some((id, text)) => {
                    let best = split_sentences(text)
                        .into_iter()
                        .enumerate()
                        .max_by_key(|(i, s)| (overlap(&question, s).0, std::cmp::Reverse(*i)))
                        .map(|(_, s)| s)
                        .unwrap_or_default();
                    format!("According to [{id}]: {best}.")
                }
                None => "I could not find grounded context to answer this question.".to_string(),
            };
            json!({
                "thought": "The retrieved context is sufficient to answer.",
                "tool_calls": [],
                "audio": audio,
                "plan": "answer from the top retrieved chunk",
                "queries": [],
            })
        };
        plan.to_string()
    }

    fn judge(req: &GenerationRequest) -> String {
        let system = req.system();
        if system.trim() == prompts::JUDGE_CLAIMS.trim() {
            let text = req
                .last_user()
                .strip_prefix(prompts::TEXT_PREFIX)
                .unwrap_or(req.last_user());
            return Value::from(split_sentences(text)).to_string();
        }
        let payload: Value = serde_json::from_str(req.last_user()).unwrap_or(Value::Null);
        let evidence = crate::text::normalize(payload["evidence"].as_str().unwrap_or(""));
        let labels: Vec<bool> = payload["claims"]
            .as_array()
            .map(|a| {
                a.iter()
                    .map(|c| {
                        let c = crate::text::normalize(c.as_str().unwrap_or(""));
                        !c.is_empty() && evidence.contains(&c)
                    })
                    .collect()
            })
            .unwrap_or_default();
        Value::from(labels).to_string()
    }
}

impl GenerationBackend for TemplateGenerator {
    fn name(&self) -> &str {
        "mock-template"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Generation, GatewayError> {
        let text = match req.role {
            ModelRole::QueryGenerator => Self::fanout(req),
            ModelRole::DocumentGenerator => Self::hypothetical(req),
            ModelRole::Agent => Self::agent(req),
            ModelRole::Judge => Self::judge(req),
        };
        Ok(Generation {
            usage: mock_usage(req, &text),
            text,
        })
    }
}

/// First paragraph following a header line.
fn section_after(history: &str, header: &str) -> Option<String> {
    let start = history.find(header)? + header.len();
    let rest = &history[start..];
    let para = rest.trim_start_matches([' ', '\n']).split("\n\n").next()?;
    Some(para.trim().to_string())
}

/// `[chunk_id] text` lines of the retrieved-context section.
fn context_lines(history: &str) -> Vec<(String, String)> {
    let Some(start) = history.find(prompts::H_CONTEXT) else {
        return Vec::new();
    };
    history[start..]
        .lines()
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .filter_map(|l| {
            let l = l.strip_prefix('[')?;
            let (id, text) = l.split_once("] ")?;
            Some((id.to_string(), text.to_string()))
        })
        .collect()
}

/// Reranker stand-in: number of distinct query tokens present in the passage.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

fn overlap(query: &str, passage: &str) -> (usize, usize) {
    let q: BTreeSet<String> = tokenize(query).into_iter().collect();
    let p: BTreeSet<String> = tokenize(passage).into_iter().collect();
    (q.intersection(&p).count(), p.len())
}

impl ScoringBackend for OverlapScorer {
    fn name(&self) -> &str {
        "mock-overlap"
    }

    fn score(&self, query: &str, passages: &[String]) -> Result<(Vec<f64>, Usage), GatewayError> {
        Ok((
            passages
                .iter()
                .map(|p| overlap(query, p).0 as f64)
                .collect(),
            Usage::default(),
        ))
    }
}

/// Second reranker stand-in: overlap count damped by passage vocabulary size.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedOverlapScorer;

impl ScoringBackend for NormalizedOverlapScorer {
    fn name(&self) -> &str {
        "mock-normalized-overlap"
    }

    fn score(&self, query: &str, passages: &[String]) -> Result<(Vec<f64>, Usage), GatewayError> {
        let scores = passages
            .iter()
            .map(|p| {
                let (shared, len) = overlap(query, p);
                shared as f64 / ((len.max(1)) as f64).sqrt()
            })
            .collect();
        Ok((scores, Usage::default()))
    }
}

/// Scorer that always fails; used to exercise rerank fallbacks.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailingScorer;

impl ScoringBackend for FailingScorer {
    fn name(&self) -> &str {
        "mock-failing"
    }

    fn score(&self, _: &str, _: &[String]) -> Result<(Vec<f64>, Usage), GatewayError> {
        Err(GatewayError::Provider {
            status: Some(400),
            message: "scorer unavailable".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Message;

    #[test]
    fn template_fanout_returns_n_distinct_lines_starting_with_q() {
        let req = GenerationRequest::new(
            ModelRole::QueryGenerator,
            vec![
                Message::system(prompts::QUERY_FANOUT),
                Message::user(prompts::fanout_user("What is X?", 4)),
            ],
        );
        let out = TemplateGenerator.generate(&req).unwrap().text;
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "What is X?");
        assert_eq!(lines.iter().collect::<BTreeSet<_>>().len(), 4);
    }

    #[test]
    fn template_hypothetical_contains_digits() {
        let req = GenerationRequest::new(
            ModelRole::DocumentGenerator,
            vec![Message::user(prompts::hypothetical_user(
                "What was the fair value per share?",
            ))],
        );
        let out = TemplateGenerator.generate(&req).unwrap().text;
        assert!(out.chars().any(|c| c.is_ascii_digit()));
    }

    #[test]
    fn template_agent_searches_then_answers() {
        let system = format!(
            "{}\n- web_search(query: string, top_n: integer): search",
            prompts::AGENT_SYSTEM
        );
        let first = format!(
            "{}\nWhat is X?\n\n{}\n[d:0] X is 5. More text.\n",
            prompts::H_QUESTION,
            prompts::H_CONTEXT
        );
        let req = GenerationRequest::new(
            ModelRole::Agent,
            vec![Message::system(&system), Message::user(&first)],
        );
        let out: Value =
            serde_json::from_str(&TemplateGenerator.generate(&req).unwrap().text).unwrap();
        assert_eq!(out["tool_calls"][0]["name"], "web_search");

        let second = format!("{first}\n{} web_search (ok)\n{{}}\n", prompts::H_TOOL);
        let req = GenerationRequest::new(
            ModelRole::Agent,
            vec![Message::system(&system), Message::user(&second)],
        );
        let out: Value =
            serde_json::from_str(&TemplateGenerator.generate(&req).unwrap().text).unwrap();
        assert_eq!(out["tool_calls"], json!([]));
        assert_eq!(out["audio"], "According to [d:0]: X is 5.");
    }

    #[test]
    fn hash_embedder_buckets_tokens() {
        let e = HashEmbedder::new(MOCK_DIM);
        let v = e.raw("alpha alpha beta");
        assert_eq!(v.iter().sum::<f64>(), 3.0);
        assert_eq!(
            v[e.bucket("alpha")],
            if e.bucket("alpha") == e.bucket("beta") {
                3.0
            } else {
                2.0
            }
        );
        assert_eq!(e.raw("!!!").iter().sum::<f64>(), 1.0);
    }
}
