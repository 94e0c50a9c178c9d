//! Web search over an ordered list of providers, the first success wins.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ParamSpec, ParamType, Tool, ToolArgs, ToolError, ToolSpec};
use crate::text::{normalize, sha256_hex};

pub const FIXTURE: &str = include_str!("../../fixtures/web_search.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchResponse {
    pub hits: Vec<SearchHit>,
    pub note: Option<String>,
}

pub trait SearchProvider: Send + Sync {
    fn name(&self) -> &str;
    fn search(&self, query: &str, top_n: usize) -> Result<SearchResponse, ToolError>;
}

/// Fixture key for a query: SHA-256 of its normalized form.
pub fn query_digest(query: &str) -> String {
    sha256_hex(normalize(query).as_bytes())
}

/// Canned results keyed by [`query_digest`].
#[derive(Debug, Clone, Default)]
pub struct FixtureSearch {
    table: BTreeMap<String, Vec<SearchHit>>,
}

#[derive(Deserialize)]
struct FixtureEntry {
    query: String,
    results: Vec<SearchHit>,
}

impl FixtureSearch {
    pub fn from_json(text: &str) -> Result<Self, ToolError> {
        let entries: Vec<FixtureEntry> = serde_json::from_str(text)
            .map_err(|e| ToolError::InvalidSpec(format!("web search fixture: {e}")))?;
        Ok(Self {
            table: entries
                .into_iter()
                .map(|e| (query_digest(&e.query), e.results))
                .collect(),
        })
    }

    pub fn builtin() -> Self {
        Self::from_json(FIXTURE).expect("bundled web search fixture parses")
    }
}

impl SearchProvider for FixtureSearch {
    fn name(&self) -> &str {
        "fixture"
    }

    fn search(&self, query: &str, top_n: usize) -> Result<SearchResponse, ToolError> {
        Ok(match self.table.get(&query_digest(query)) {
            Some(hits) => SearchResponse {
                hits: hits.iter().take(top_n).cloned().collect(),
                note: None,
            },
            None => SearchResponse {
                hits: Vec::new(),
                note: Some("no fixture entry for this query".into()),
            },
        })
    }
}

/// SERP-style JSON API: `GET {base_url}?q=..&num=..&api_key=..`, answered
/// with `organic_results: [{title, link, snippet}]`.
pub struct HttpSearch {
    name: String,
    base_url: String,
    api_key_env: String,
    engine: Option<String>,
    allow_network: bool,
    agent: ureq::Agent,
}

impl HttpSearch {
    pub fn new(
        name: impl Into<String>,
        base_url: impl Into<String>,
        api_key_env: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into(),
            api_key_env: api_key_env.into(),
            engine: None,
            allow_network: true,
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(20)))
                .build()
                .into(),
        }
    }

    pub fn engine(mut self, engine: impl Into<String>) -> Self {
        self.engine = Some(engine.into());
        self
    }

    pub fn offline(mut self) -> Self {
        self.allow_network = false;
        self
    }
}

impl SearchProvider for HttpSearch {
    fn name(&self) -> &str {
        &self.name
    }

    fn search(&self, query: &str, top_n: usize) -> Result<SearchResponse, ToolError> {
        if !self.allow_network {
            return Err(ToolError::NoNetwork(self.name.clone()));
        }
        let key = std::env::var(&self.api_key_env).map_err(|_| {
            ToolError::Failed(format!(
                "environment variable {} is not set",
                self.api_key_env
            ))
        })?;
        let mut req = self
            .agent
            .get(&self.base_url)
            .query("q", query)
            .query("num", top_n.to_string())
            .query("api_key", key);
        if let Some(engine) = &self.engine {
            req = req.query("engine", engine);
        }
        let body: Value = req
            .call()
            .map_err(|e| ToolError::Failed(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| ToolError::Failed(e.to_string()))?;
        let hits = body["organic_results"]
            .as_array()
            .ok_or_else(|| ToolError::Failed("response has no organic_results".into()))?
            .iter()
            .take(top_n)
            .map(|r| SearchHit {
                title: r["title"].as_str().unwrap_or_default().to_string(),
                url: r["link"].as_str().unwrap_or_default().to_string(),
                snippet: r["snippet"].as_str().unwrap_or_default().to_string(),
            })
            .collect();
        Ok(SearchResponse { hits, note: None })
    }
}

pub struct WebSearchTool {
    providers: Vec<Arc<dyn SearchProvider>>,
}

impl WebSearchTool {
    pub fn new(providers: Vec<Arc<dyn SearchProvider>>) -> Self {
        Self { providers }
    }

    pub fn fixture() -> Self {
        Self::new(vec![Arc::new(FixtureSearch::builtin())])
    }
}

impl Tool for WebSearchTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "web_search".into(),
            description:
                "Search the web; returns title, url and snippet per result (top_n 1-10, default 5)."
                    .into(),
            params: vec![
                ParamSpec::required("query", ParamType::String),
                ParamSpec::optional("top_n", ParamType::Integer),
            ],
        }
    }

    fn call(&self, args: &ToolArgs) -> Result<Value, ToolError> {
        let query = args["query"].as_str().unwrap_or_default().trim();
        if query.is_empty() {
            return Err(ToolError::InvalidArgs("query must be non-empty".into()));
        }
        let top_n = args.get("top_n").and_then(Value::as_f64).unwrap_or(5.0);
        if !(1.0..=10.0).contains(&top_n) {
            return Err(ToolError::InvalidArgs(
                "top_n must be between 1 and 10".into(),
            ));
        }
        let mut failures = Vec::new();
        for p in &self.providers {
            match p.search(query, top_n as usize) {
                Ok(resp) => {
                    let mut out =
                        json!({"query": query, "provider": p.name(), "results": resp.hits});
                    if let Some(note) = resp.note {
                        out["note"] = Value::String(note);
                    }
                    return Ok(out);
                }
                Err(e) => failures.push(format!("{}: {e}", p.name())),
            }
        }
        Err(ToolError::Failed(format!(
            "all search providers failed ({})",
            failures.join("; ")
        )))
    }
}
