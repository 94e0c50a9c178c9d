//! One-shot question answering shared by `POST /query` and `mhrag query`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use mhrag_core::agent::{AgentState, Budgets, Episode, Event};
use mhrag_core::pipeline::Pipeline;
use mhrag_core::retriever::{QueryFanout, RetrievalConfig, RetrievalTrace};
use mhrag_core::tools::ToolRegistry;

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub question: String,
    /// Partial retrieval settings merged over the configured ones.
    #[serde(default)]
    pub retrieval: Option<Value>,
    #[serde(default)]
    pub budgets: Option<Value>,
    /// `false` hides the external tools for this request.
    #[serde(default)]
    pub tools: Option<bool>,
    #[serde(default)]
    pub include_events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub answer: String,
    pub confident: bool,
    pub flags: Vec<String>,
    pub citations: Vec<String>,
    /// Chunk ids of the retrieved context, in rank order.
    pub context: Vec<String>,
    pub fanout: QueryFanout,
    pub retrieval_trace: RetrievalTrace,
    pub iterations: usize,
    pub tool_calls: usize,
    pub trace_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<Event>>,
}

/// Overlays the keys of `patch` on the serialized form of `base`.
pub fn merge_overrides<T>(base: &T, patch: Option<&Value>, what: &str) -> Result<T, QueryError>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let Some(patch) = patch else {
        return serde_json::from_value(serde_json::to_value(base).expect("config serializes"))
            .map_err(|e| QueryError::Invalid(format!("{what}: {e}")));
    };
    let Value::Object(patch) = patch else {
        return Err(QueryError::Invalid(format!("{what} must be an object")));
    };
    let mut merged = serde_json::to_value(base).expect("config serializes");
    let obj = merged.as_object_mut().expect("config is an object");
    for (k, v) in patch {
        if !obj.contains_key(k) {
            return Err(QueryError::Invalid(format!("{what}: unknown field `{k}`")));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(merged).map_err(|e| QueryError::Invalid(format!("{what}: {e}")))
}

/// Hex sha256 over the question, the effective settings and the episode's
/// events. Identical requests against identical state share a trace id.
pub fn trace_id(
    question: &str,
    retrieval: &RetrievalConfig,
    budgets: &Budgets,
    tools: bool,
    events: &[Event],
) -> String {
    let canonical = serde_json::json!({
        "question": question,
        "retrieval": retrieval,
        "budgets": budgets,
        "tools": tools,
        "events": events,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

pub fn run_query(pipeline: &Pipeline, req: &QueryRequest) -> Result<QueryResponse, QueryError> {
    let question = req.question.trim();
    if question.is_empty() {
        return Err(QueryError::Invalid("question is empty".into()));
    }
    let retrieval: RetrievalConfig = merge_overrides(
        &pipeline.config.retrieval,
        req.retrieval.as_ref(),
        "retrieval",
    )?;
    retrieval
        .validate()
        .map_err(|e| QueryError::Invalid(format!("retrieval: {e}")))?;
    let budgets: Budgets = merge_overrides(
        &pipeline.config.agent.budgets,
        req.budgets.as_ref(),
        "budgets",
    )?;
    budgets
        .validate()
        .map_err(|e| QueryError::Invalid(format!("budgets: {e}")))?;
    let tools = req.tools.unwrap_or(true);

    let mut p = pipeline.clone();
    if !tools {
        p.tools = ToolRegistry::new();
    }
    let agent = p.batch_agent().with_retrieval(retrieval.clone());
    let mut state = AgentState::new("query", budgets);
    let ep: Episode = agent
        .answer_query(question, &mut state, &|_, _| {})
        .map_err(|e| QueryError::Invalid(e.to_string()))?;
    let events = state.episode().to_vec();
    Ok(QueryResponse {
        trace_id: trace_id(question, &retrieval, &budgets, tools, &events),
        context: ep
            .context
            .chunk_ids()
            .into_iter()
            .map(String::from)
            .collect(),
        fanout: ep.context.fanout,
        retrieval_trace: ep.context.trace,
        answer: ep.answer,
        confident: ep.confident,
        flags: ep.flags,
        citations: ep.citations,
        iterations: ep.iterations,
        tool_calls: ep.tool_calls,
        events: req.include_events.then_some(events),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mhrag_core::config::PipelineConfig;
    use mhrag_core::pipeline::fixtures_dir;
    use serde_json::json;

    fn fixture() -> Pipeline {
        let mut cfg = PipelineConfig::default();
        cfg.corpus.paths = vec![fixtures_dir().join("corpus")];
        let p = Pipeline::from_config(cfg).unwrap();
        p.ingest_corpus().unwrap();
        p
    }

    fn ask(q: &str) -> QueryRequest {
        QueryRequest {
            question: q.into(),
            ..Default::default()
        }
    }

    #[test]
    fn overrides_merge_and_reject_unknown_keys() {
        let base = RetrievalConfig::default();
        let m: RetrievalConfig = merge_overrides(&base, Some(&json!({"k_final": 3})), "r").unwrap();
        assert_eq!(m.k_final, 3);
        assert_eq!(m.k1_dense, base.k1_dense);
        assert!(
            merge_overrides::<RetrievalConfig>(&base, Some(&json!({"bogus": 1})), "r").is_err()
        );
        assert!(merge_overrides::<RetrievalConfig>(&base, Some(&json!([1])), "r").is_err());
        assert!(
            merge_overrides::<RetrievalConfig>(&base, Some(&json!({"k_final": "x"})), "r").is_err()
        );
    }

    #[test]
    fn identical_requests_share_answer_and_trace() {
        let p = fixture();
        let q = ask("What was Microsoft Cloud revenue in fiscal year 2023?");
        let a = run_query(&p, &q).unwrap();
        let b = run_query(&p, &q).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace_id.len(), 64);
        assert!(a.citations.iter().all(|c| a.context.contains(c)));
        let other = run_query(&p, &ask("What dividend did American Water declare?")).unwrap();
        assert_ne!(other.trace_id, a.trace_id);
    }

    #[test]
    fn overrides_change_the_trace() {
        let p = fixture();
        let mut q = ask("What was Microsoft Cloud revenue in fiscal year 2023?");
        let a = run_query(&p, &q).unwrap();
        q.retrieval = Some(json!({"k_final": 2}));
        let b = run_query(&p, &q).unwrap();
        assert!(b.context.len() <= 2);
        assert_ne!(a.trace_id, b.trace_id);
        q.retrieval = Some(json!({"k_final": 0}));
        assert!(run_query(&p, &q).is_err());
    }

    #[test]
    fn empty_question_is_invalid() {
        assert!(run_query(&fixture(), &ask("  ")).is_err());
    }
}
