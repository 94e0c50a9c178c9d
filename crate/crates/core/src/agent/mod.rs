//! The meta-plan tool loop: ground on retrieved context, ask the agent model
//! for a plan, run its tool calls, and repeat until it answers.

mod clarify;
mod history;
mod ledger;
mod plan;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use clarify::{
    AutoResponder, ClarificationChannel, ClarificationReply, ClarifyError, InteractiveChannel,
    ReplySource, ScriptedResponder, AUTO_CLARIFICATION,
};
pub use history::render_history;
pub use ledger::{is_traceable, validate_ledger};
pub use plan::{parse_meta_plan, MetaPlan, ParseFailure, SubQuery};

use crate::gateway::{Gateway, GenerationRequest, Message, ModelRole};
use crate::prompts;
use crate::retriever::{ContextSet, QueryFanout, RetrievalConfig, RetrievalTrace, Retriever};
use crate::text::normalize;
use crate::tools::{Outcome, ParamSpec, ParamType, ToolCall, ToolRegistry, ToolResult, ToolSpec};

pub const ASK_USER: &str = "ask_user";
pub const RETRIEVE_DOCUMENTS: &str = "retrieve_documents";
/// Extra argument naming the ledger entry a tool call answers.
pub const SUB_QUERY_ARG: &str = "sub_query";

pub const FLAG_BUDGET: &str = "budget_exhausted";
pub const FLAG_UNPARSEABLE: &str = "unparseable_meta_plan";
pub const FLAG_GENERATION: &str = "generation_failed";
pub const FLAG_RETRIEVAL: &str = "retrieval_failed";
pub const FLAG_CLARIFY_TIMEOUT: &str = "clarification_timeout";
pub const FLAG_LEDGER: &str = "untraceable_ledger_answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub max_iterations: usize,
    pub max_tool_calls: usize,
    /// Prompt budget for the rendered history, in whitespace tokens.
    pub max_tokens: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            max_iterations: 8,
            max_tool_calls: 16,
            max_tokens: 6000,
        }
    }
}

impl Budgets {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_iterations == 0 || self.max_tool_calls == 0 || self.max_tokens == 0 {
            return Err(AgentError::InvalidBudgets(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("question must be non-empty")]
    EmptyQuery,
    #[error("budgets must be positive: {0}")]
    InvalidBudgets(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    UserQuery {
        text: String,
    },
    RetrievedContext {
        context: ContextSet,
    },
    MetaPlan {
        iteration: usize,
        plan: MetaPlan,
        /// Parsed from the reply to a repair prompt.
        repaired: bool,
    },
    ToolResult {
        iteration: usize,
        result: ToolResult,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sub_query: Option<String>,
    },
    ClarificationRequest {
        id: u64,
        question: String,
    },
    ClarificationAnswer {
        id: u64,
        text: String,
        source: ReplySource,
    },
    FinalAnswer {
        text: String,
        confident: bool,
        flags: Vec<String>,
        citations: Vec<String>,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::UserQuery { .. } => "user_query",
            Event::RetrievedContext { .. } => "retrieved_context",
            Event::MetaPlan { .. } => "meta_plan",
            Event::ToolResult { .. } => "tool_result",
            Event::ClarificationRequest { .. } => "clarification_request",
            Event::ClarificationAnswer { .. } => "clarification_answer",
            Event::FinalAnswer { .. } => "final_answer",
        }
    }
}

/// Per-session state. `history` spans all episodes of the session; the
/// counters and ledger cover the current one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub session_id: String,
    pub history: Vec<Event>,
    pub iteration: usize,
    pub budgets: Budgets,
    pub ledger: Vec<SubQuery>,
    pub tool_calls: usize,
    episode_start: usize,
    next_clarification: u64,
}

impl AgentState {
    pub fn new(session_id: impl Into<String>, budgets: Budgets) -> Self {
        Self {
            session_id: session_id.into(),
            history: Vec::new(),
            iteration: 0,
            budgets,
            ledger: Vec::new(),
            tool_calls: 0,
            episode_start: 0,
            next_clarification: 1,
        }
    }

    /// State for a session whose earlier events were persisted.
    pub fn resume(session_id: impl Into<String>, budgets: Budgets, history: Vec<Event>) -> Self {
        let next = history
            .iter()
            .filter_map(|e| match e {
                Event::ClarificationRequest { id, .. } => Some(*id),
                _ => None,
            })
            .max()
            .unwrap_or(0)
            + 1;
        let start = history.len();
        Self {
            history,
            episode_start: start,
            next_clarification: next,
            ..Self::new(session_id, budgets)
        }
    }

    /// Events of the current (or last) episode.
    pub fn episode(&self) -> &[Event] {
        &self.history[self.episode_start..]
    }

    fn begin(&mut self) {
        self.episode_start = self.history.len();
        self.iteration = 0;
        self.tool_calls = 0;
        self.ledger.clear();
    }

    fn push(&mut self, event: Event, observer: &dyn Fn(usize, &Event)) {
        observer(self.history.len(), &event);
        self.history.push(event);
    }
}

/// Result of one `answer_query` episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub answer: String,
    pub confident: bool,
    pub flags: Vec<String>,
    pub citations: Vec<String>,
    pub iterations: usize,
    pub tool_calls: usize,
    pub context: ContextSet,
}

/// Phrases that mark an answer as hedged or refused.
const HEDGES: &[&str] = &[
    "could not",
    "cannot",
    "can't",
    "unable to",
    "not able to",
    "no information",
    "not enough information",
    "insufficient",
    "i don't know",
    "i do not know",
    "not available",
    "does not contain",
    "do not contain",
];

pub fn is_hedged(answer: &str) -> bool {
    let a = answer.to_lowercase();
    a.trim().is_empty() || HEDGES.iter().any(|h| a.contains(h))
}

fn builtin_specs() -> [ToolSpec; 2] {
    [
        ToolSpec {
            name: ASK_USER.into(),
            description: "Ask the user a short clarifying question and wait for the reply.".into(),
            params: vec![ParamSpec::required("question", ParamType::String)],
        },
        ToolSpec {
            name: RETRIEVE_DOCUMENTS.into(),
            description:
                "Search the document corpus again with a new query; returns chunk ids and text."
                    .into(),
            params: vec![
                ParamSpec::required("query", ParamType::String),
                ParamSpec::optional("k", ParamType::Integer),
            ],
        },
    ]
}

fn empty_context(q: &str, warning: String) -> ContextSet {
    ContextSet {
        chunks: Vec::new(),
        fanout: QueryFanout {
            original: q.to_string(),
            ..QueryFanout::default()
        },
        trace: RetrievalTrace {
            warnings: vec![warning],
            ..RetrievalTrace::default()
        },
    }
}

/// Short text form of a tool payload for the sub-query ledger.
fn summarize(payload: &Value) -> String {
    for key in ["display", "value", "answer"] {
        match payload.get(key) {
            Some(Value::String(s)) => return s.clone(),
            Some(v @ Value::Number(_)) => return v.to_string(),
            _ => {}
        }
    }
    let s = payload.to_string();
    s.chars().take(300).collect()
}

/// `[id]` references in `text` that name a known chunk, first-seen order.
fn citations(text: &str, known: &BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        let Some(close) = rest.find(']') else { break };
        for id in rest[..close].split([',', ';']).map(str::trim) {
            if known.contains(id) && !out.iter().any(|o| o == id) {
                out.push(id.to_string());
            }
        }
        rest = &rest[close + 1..];
    }
    out
}

fn known_chunks(events: &[Event]) -> BTreeSet<String> {
    let mut ids = BTreeSet::new();
    for e in events {
        match e {
            Event::RetrievedContext { context } => {
                ids.extend(context.chunk_ids().into_iter().map(String::from))
            }
            Event::ToolResult { result, .. } if result.tool_name == RETRIEVE_DOCUMENTS => {
                if let Outcome::Ok { payload } = &result.outcome {
                    let chunks = payload["chunks"].as_array().into_iter().flatten();
                    ids.extend(chunks.filter_map(|c| c["chunk_id"].as_str().map(String::from)));
                }
            }
            _ => {}
        }
    }
    ids
}

#[derive(Clone)]
pub struct Agent {
    retriever: Retriever,
    gateway: Gateway,
    tools: ToolRegistry,
    retrieval: RetrievalConfig,
    clarifier: Arc<dyn ClarificationChannel>,
    max_output_tokens: u32,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("tools", &self.tools)
            .field("retrieval", &self.retrieval)
            .finish_non_exhaustive()
    }
}

impl Agent {
    /// Batch-mode agent: clarification requests are auto-answered.
    pub fn new(retriever: Retriever, gateway: Gateway, tools: ToolRegistry) -> Self {
        Self {
            retriever,
            gateway,
            tools,
            retrieval: RetrievalConfig::default(),
            clarifier: Arc::new(AutoResponder::default()),
            max_output_tokens: 1024,
        }
    }

    pub fn with_retrieval(mut self, cfg: RetrievalConfig) -> Self {
        self.retrieval = cfg;
        self
    }

    pub fn with_clarifier(mut self, clarifier: Arc<dyn ClarificationChannel>) -> Self {
        self.clarifier = clarifier;
        self
    }

    pub fn retrieval(&self) -> &RetrievalConfig {
        &self.retrieval
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.tools
    }

    /// Built-in and registered tools, one `- signature` line each, in name
    /// order.
    pub fn roster(&self) -> String {
        let mut specs: Vec<ToolSpec> = builtin_specs().into_iter().collect();
        specs.extend(
            self.tools
                .list()
                .into_iter()
                .filter(|s| s.name != ASK_USER && s.name != RETRIEVE_DOCUMENTS),
        );
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        specs
            .iter()
            .map(|s| format!("- {}", s.signature()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn system_prompt(&self) -> String {
        format!("{}\n{}", prompts::AGENT_SYSTEM.trim_end(), self.roster())
    }

    /// Runs one episode for `q`, appending its events to `state.history`.
    /// `observer` sees each event with its history index as it is appended.
    pub fn answer_query(
        &self,
        q: &str,
        state: &mut AgentState,
        observer: &dyn Fn(usize, &Event),
    ) -> Result<Episode, AgentError> {
        let q = q.trim();
        if q.is_empty() {
            return Err(AgentError::EmptyQuery);
        }
        state.budgets.validate()?;
        state.begin();
        let mut flags: Vec<String> = Vec::new();
        state.push(
            Event::UserQuery {
                text: q.to_string(),
            },
            observer,
        );
        let context = match self.retriever.retrieve(q, &self.retrieval) {
            Ok(c) => c,
            Err(e) => {
                flags.push(FLAG_RETRIEVAL.into());
                empty_context(q, e.to_string())
            }
        };
        state.push(
            Event::RetrievedContext {
                context: context.clone(),
            },
            observer,
        );

        let system = self.system_prompt();
        loop {
            if state.iteration >= state.budgets.max_iterations {
                flags.push(FLAG_BUDGET.into());
                let answer = ledger::partial_findings(state);
                return Ok(self.finish(state, answer, Some(false), flags, context, observer));
            }
            state.iteration += 1;
            let prompt = render_history(state.episode(), &state.ledger, state.budgets.max_tokens);
            let messages = vec![Message::system(system.clone()), Message::user(prompt)];
            let raw = match self.gateway.generate(&self.request(messages.clone())) {
                Ok(g) => g.text,
                Err(e) => {
                    flags.push(format!("{FLAG_GENERATION}: {e}"));
                    let answer = "I could not complete the answer because the language model was unavailable.";
                    return Ok(self.finish(
                        state,
                        answer.into(),
                        Some(false),
                        flags,
                        context,
                        observer,
                    ));
                }
            };
            let (plan, repaired) = match parse_meta_plan(&raw) {
                Ok(p) => (p, false),
                Err(err) => match self.repair(messages, &raw, &err) {
                    Ok(p) => (p, true),
                    Err(text) => {
                        flags.push(FLAG_UNPARSEABLE.into());
                        return Ok(self.finish(state, text, None, flags, context, observer));
                    }
                },
            };
            let iteration = state.iteration;
            state.push(
                Event::MetaPlan {
                    iteration,
                    plan: plan.clone(),
                    repaired,
                },
                observer,
            );
            if !ledger::merge(state, &plan.queries) {
                flags.push(FLAG_LEDGER.into());
            }
            if plan.tool_calls.is_empty() {
                if !plan.audio.trim().is_empty() {
                    return Ok(self.finish(
                        state,
                        plan.audio.trim().to_string(),
                        None,
                        flags,
                        context,
                        observer,
                    ));
                }
                continue;
            }
            if self.dispatch_turn(state, plan.tool_calls, observer) {
                flags.push(FLAG_CLARIFY_TIMEOUT.into());
            }
        }
    }

    fn request(&self, messages: Vec<Message>) -> GenerationRequest {
        GenerationRequest::new(ModelRole::Agent, messages)
            .max_tokens(self.max_output_tokens)
            .temperature(0.0)
            .schema_constrained()
    }

    /// One repair round. `Err` carries the text to use as a free-text answer.
    fn repair(
        &self,
        mut messages: Vec<Message>,
        raw: &str,
        err: &ParseFailure,
    ) -> Result<MetaPlan, String> {
        messages.push(Message::assistant(raw));
        messages.push(Message::user(format!(
            "Your previous reply could not be parsed ({err}). Reply with one JSON object that follows the schema."
        )));
        match self.gateway.generate(&self.request(messages)) {
            Ok(g) => parse_meta_plan(&g.text).map_err(|_| g.text),
            Err(_) => Err(raw.to_string()),
        }
    }

    fn finish(
        &self,
        state: &mut AgentState,
        answer: String,
        confident: Option<bool>,
        mut flags: Vec<String>,
        context: ContextSet,
        observer: &dyn Fn(usize, &Event),
    ) -> Episode {
        let answer = if answer.trim().is_empty() {
            "I could not produce an answer.".to_string()
        } else {
            answer.trim().to_string()
        };
        let confident = confident.unwrap_or(true) && !is_hedged(&answer);
        flags.dedup();
        let cites = citations(&answer, &known_chunks(state.episode()));
        state.push(
            Event::FinalAnswer {
                text: answer.clone(),
                confident,
                flags: flags.clone(),
                citations: cites.clone(),
            },
            observer,
        );
        Episode {
            answer,
            confident,
            flags,
            citations: cites,
            iterations: state.iteration,
            tool_calls: state.tool_calls,
            context,
        }
    }

    /// Runs one turn's tool calls. Clarifications go first, in order; the
    /// rest run concurrently and are appended in call order. Returns whether
    /// a clarification timed out.
    fn dispatch_turn(
        &self,
        state: &mut AgentState,
        calls: Vec<ToolCall>,
        observer: &dyn Fn(usize, &Event),
    ) -> bool {
        let iteration = state.iteration;
        let mut timed_out = false;
        let mut batch: Vec<(ToolCall, Option<String>, Option<ToolResult>)> = Vec::new();
        for mut call in calls {
            let sub_query = match call.args.remove(SUB_QUERY_ARG) {
                Some(Value::String(s)) if !s.trim().is_empty() => Some(s),
                _ => None,
            };
            if state.tool_calls >= state.budgets.max_tool_calls {
                let r = ToolResult::error(
                    &call,
                    "tool-call budget exhausted; answer with the information gathered so far",
                );
                batch.push((call, sub_query, Some(r)));
                continue;
            }
            state.tool_calls += 1;
            if call.name == ASK_USER {
                let [spec, _] = builtin_specs();
                if let Err(e) = spec.validate_args(&call.args) {
                    let r = ToolResult::error(&call, e.to_string());
                    batch.push((call, sub_query, Some(r)));
                    continue;
                }
                let question = call.args["question"]
                    .as_str()
                    .unwrap_or_default()
                    .to_string();
                let reply = self.clarify(state, &question, observer);
                timed_out |= reply.source == ReplySource::Timeout;
                if let Some(s) = sub_query {
                    ledger::record(state, &s, &reply.text);
                }
                continue;
            }
            batch.push((call, sub_query, None));
        }

        let results: Vec<ToolResult> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|(call, _, done)| {
                    let done = done.clone();
                    scope.spawn(move || done.unwrap_or_else(|| self.run_tool(call)))
                })
                .collect();
            handles
                .into_iter()
                .zip(&batch)
                .map(|(h, (call, _, _))| {
                    h.join()
                        .unwrap_or_else(|_| ToolResult::error(call, "tool worker panicked"))
                })
                .collect()
        });
        for (result, (_, sub_query, _)) in results.into_iter().zip(batch) {
            if let (Some(s), Outcome::Ok { payload }) = (&sub_query, &result.outcome) {
                let summary = summarize(payload);
                state.push(
                    Event::ToolResult {
                        iteration,
                        result: result.clone(),
                        sub_query: sub_query.clone(),
                    },
                    observer,
                );
                ledger::record(state, s, &summary);
            } else {
                state.push(
                    Event::ToolResult {
                        iteration,
                        result,
                        sub_query,
                    },
                    observer,
                );
            }
        }
        timed_out
    }

    fn clarify(
        &self,
        state: &mut AgentState,
        question: &str,
        observer: &dyn Fn(usize, &Event),
    ) -> ClarificationReply {
        let id = state.next_clarification;
        state.next_clarification += 1;
        let reply = {
            let mut announce = || {
                state.push(
                    Event::ClarificationRequest {
                        id,
                        question: question.to_string(),
                    },
                    observer,
                )
            };
            self.clarifier.ask(id, question, &mut announce)
        };
        state.push(
            Event::ClarificationAnswer {
                id,
                text: reply.text.clone(),
                source: reply.source,
            },
            observer,
        );
        reply
    }

    fn run_tool(&self, call: &ToolCall) -> ToolResult {
        if call.name != RETRIEVE_DOCUMENTS {
            return self.tools.dispatch_one(call);
        }
        let [_, spec] = builtin_specs();
        if let Err(e) = spec.validate_args(&call.args) {
            return ToolResult::error(call, e.to_string());
        }
        let query = call.args["query"].as_str().unwrap_or_default();
        let mut cfg = self.retrieval.clone();
        if let Some(k) = call.args.get("k").and_then(Value::as_u64) {
            cfg.k_final = k.clamp(1, 20) as usize;
        }
        let outcome = match self.retriever.retrieve(query, &cfg) {
            Ok(ctx) => Outcome::Ok {
                payload: json!({
                    "query": query,
                    "chunks": ctx.chunks.iter().map(|c| json!({
                        "chunk_id": c.chunk.chunk_id,
                        "text": c.chunk.text,
                        "score": c.score,
                    })).collect::<Vec<_>>(),
                }),
            },
            Err(e) => Outcome::Error {
                message: e.to_string(),
            },
        };
        ToolResult {
            tool_name: call.name.clone(),
            args: call.args.clone(),
            outcome,
            latency: 0.0,
        }
    }
}

/// Normalized-query key for ledger lookups.
fn ledger_key(q: &str) -> String {
    normalize(q)
}
