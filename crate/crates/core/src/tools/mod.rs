//! Agent tools and the registry that validates and dispatches calls.
//!
//! Every tool failure, including a panic inside the tool, comes back as an
//! error [`ToolResult`]; nothing escapes [`ToolRegistry::dispatch`].

pub mod calculator;
pub mod filings;
pub mod market;
pub mod web;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use calculator::Calculator;
pub use filings::FilingsTool;
pub use market::{FxRateTool, MarketDataTool};
pub use web::WebSearchTool;

pub type ToolArgs = serde_json::Map<String, Value>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("tool `{0}` is already registered")]
    Duplicate(String),
    #[error("tool spec is invalid: {0}")]
    InvalidSpec(String),
    #[error("unknown tool `{0}`")]
    Unknown(String),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("{0}")]
    Failed(String),
    #[error("backend `{0}` needs network access, which is disabled in this profile")]
    NoNetwork(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "values")]
pub enum ParamType {
    String,
    Number,
    Integer,
    Enum(Vec<String>),
}

impl ParamType {
    fn describe(&self) -> String {
        match self {
            ParamType::String => "string".into(),
            ParamType::Number => "number".into(),
            ParamType::Integer => "integer".into(),
            ParamType::Enum(v) => v.join("|"),
        }
    }

    fn accepts(&self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Number => v.is_number(),
            ParamType::Integer => {
                v.is_i64() || v.is_u64() || v.as_f64().is_some_and(|f| f.fract() == 0.0)
            }
            ParamType::Enum(values) => v.as_str().is_some_and(|s| values.iter().any(|x| x == s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
}

impl ParamSpec {
    pub fn required(name: &str, ty: ParamType) -> Self {
        Self {
            name: name.into(),
            ty,
            required: true,
        }
    }

    pub fn optional(name: &str, ty: ParamType) -> Self {
        Self {
            name: name.into(),
            ty,
            required: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    /// `name(param: type, opt?: type): description`, the roster line shown
    /// to the agent.
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| {
                format!(
                    "{}{}: {}",
                    p.name,
                    if p.required { "" } else { "?" },
                    p.ty.describe()
                )
            })
            .collect();
        format!("{}({}): {}", self.name, params.join(", "), self.description)
    }

    pub fn validate_args(&self, args: &ToolArgs) -> Result<(), ToolError> {
        for key in args.keys() {
            if !self.params.iter().any(|p| &p.name == key) {
                return Err(ToolError::InvalidArgs(format!(
                    "unexpected argument `{key}`"
                )));
            }
        }
        for p in &self.params {
            match args.get(&p.name) {
                None | Some(Value::Null) if p.required => {
                    return Err(ToolError::InvalidArgs(format!(
                        "missing required argument `{}`",
                        p.name
                    )))
                }
                None | Some(Value::Null) => {}
                Some(v) if !p.ty.accepts(v) => {
                    return Err(ToolError::InvalidArgs(format!(
                        "argument `{}` must be {}, got {v}",
                        p.name,
                        p.ty.describe()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

pub trait Tool: Send + Sync {
    fn spec(&self) -> ToolSpec;
    /// Called only with arguments that passed [`ToolSpec::validate_args`].
    fn call(&self, args: &ToolArgs) -> Result<Value, ToolError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub args: ToolArgs,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, args: Value) -> Self {
        Self {
            name: name.into(),
            args: match args {
                Value::Object(m) => m,
                _ => ToolArgs::new(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Outcome {
    Ok { payload: Value },
    Error { message: String },
}

impl Outcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_name: String,
    pub args: ToolArgs,
    pub outcome: Outcome,
    /// Seconds; zero when latency recording is off.
    pub latency: f64,
}

impl ToolResult {
    pub fn error(call: &ToolCall, message: impl Into<String>) -> Self {
        Self {
            tool_name: call.name.clone(),
            args: call.args.clone(),
            outcome: Outcome::Error {
                message: message.into(),
            },
            latency: 0.0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

/// Tools by name. Cloning shares the tool instances.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, (ToolSpec, Arc<dyn Tool>)>,
    record_latency: bool,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Measure wall time per call; off by default so fixture runs replay
    /// byte for byte.
    pub fn record_latency(mut self, on: bool) -> Self {
        self.record_latency = on;
        self
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), ToolError> {
        let spec = tool.spec();
        if spec.name.trim().is_empty() || spec.description.trim().is_empty() {
            return Err(ToolError::InvalidSpec(
                "name and description must be non-empty".into(),
            ));
        }
        if self.tools.contains_key(&spec.name) {
            return Err(ToolError::Duplicate(spec.name));
        }
        self.tools.insert(spec.name.clone(), (spec, tool));
        Ok(())
    }

    pub fn with(mut self, tool: Arc<dyn Tool>) -> Result<Self, ToolError> {
        self.register(tool)?;
        Ok(self)
    }

    pub fn deregister(&mut self, name: &str) -> bool {
        self.tools.remove(name).is_some()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    /// Specs in name order.
    pub fn list(&self) -> Vec<ToolSpec> {
        self.tools.values().map(|(s, _)| s.clone()).collect()
    }

    /// One `- signature` line per tool, in name order.
    pub fn roster(&self) -> String {
        self.tools
            .values()
            .map(|(s, _)| format!("- {}", s.signature()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn dispatch_one(&self, call: &ToolCall) -> ToolResult {
        let Some((spec, tool)) = self.tools.get(&call.name) else {
            return ToolResult::error(call, ToolError::Unknown(call.name.clone()).to_string());
        };
        if let Err(e) = spec.validate_args(&call.args) {
            return ToolResult::error(call, e.to_string());
        }
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(|| tool.call(&call.args))) {
            Ok(Ok(payload)) => Outcome::Ok { payload },
            Ok(Err(e)) => Outcome::Error {
                message: e.to_string(),
            },
            Err(panic) => Outcome::Error {
                message: format!("tool panicked: {}", panic_message(&panic)),
            },
        };
        ToolResult {
            tool_name: call.name.clone(),
            args: call.args.clone(),
            outcome,
            latency: if self.record_latency {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        }
    }

    /// Runs calls concurrently; results are in call order.
    pub fn dispatch(&self, calls: &[ToolCall]) -> Vec<ToolResult> {
        match calls {
            [] => Vec::new(),
            [one] => vec![self.dispatch_one(one)],
            _ => std::thread::scope(|scope| {
                let handles: Vec<_> = calls
                    .iter()
                    .map(|c| scope.spawn(move || self.dispatch_one(c)))
                    .collect();
                handles
                    .into_iter()
                    .zip(calls)
                    .map(|(h, c)| {
                        h.join()
                            .unwrap_or_else(|_| ToolResult::error(c, "tool worker panicked"))
                    })
                    .collect()
            }),
        }
    }
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}

/// Calculator plus fixture-backed web search, FX, market data and filings.
pub fn fixture_registry() -> ToolRegistry {
    let mut r = ToolRegistry::new();
    let tools: [Arc<dyn Tool>; 5] = [
        Arc::new(Calculator),
        Arc::new(WebSearchTool::fixture()),
        Arc::new(FxRateTool::fixture()),
        Arc::new(MarketDataTool::fixture()),
        Arc::new(FilingsTool::fixture()),
    ];
    for t in tools {
        r.register(t).expect("built-in tool names are unique");
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct Boom;
    impl Tool for Boom {
        fn spec(&self) -> ToolSpec {
            ToolSpec {
                name: "boom".into(),
                description: "always panics".into(),
                params: vec![],
            }
        }
        fn call(&self, _: &ToolArgs) -> Result<Value, ToolError> {
            panic!("kaboom")
        }
    }

    #[test]
    fn empty_batch() {
        assert!(fixture_registry().dispatch(&[]).is_empty());
    }

    #[test]
    fn valid_and_unknown_calls_are_isolated() {
        let r = fixture_registry();
        let out = r.dispatch(&[
            ToolCall::new("calculator", json!({"expression": "1+1"})),
            ToolCall::new("nope", json!({})),
        ]);
        assert!(out[0].is_ok());
        assert_eq!(out[0].tool_name, "calculator");
        assert!(
            matches!(&out[1].outcome, Outcome::Error { message } if message.contains("unknown tool"))
        );
    }

    #[test]
    fn argument_validation() {
        let r = fixture_registry();
        let missing = r.dispatch_one(&ToolCall::new("calculator", json!({})));
        assert!(!missing.is_ok());
        let wrong = r.dispatch_one(&ToolCall::new(
            "web_search",
            json!({"query": "x", "top_n": "3"}),
        ));
        assert!(!wrong.is_ok());
        let extra = r.dispatch_one(&ToolCall::new(
            "calculator",
            json!({"expression": "1", "x": 1}),
        ));
        assert!(!extra.is_ok());
        let int_float = r.dispatch_one(&ToolCall::new(
            "web_search",
            json!({"query": "x", "top_n": 2.0}),
        ));
        assert!(int_float.is_ok());
    }

    #[test]
    fn panics_become_error_results() {
        let mut r = ToolRegistry::new();
        r.register(Arc::new(Boom)).unwrap();
        let out = r.dispatch(&[
            ToolCall::new("boom", json!({})),
            ToolCall::new("boom", json!({})),
        ]);
        for res in out {
            assert!(
                matches!(res.outcome, Outcome::Error { ref message } if message.contains("kaboom"))
            );
        }
    }

    #[test]
    fn register_list_deregister() {
        let mut r = ToolRegistry::new();
        r.register(Arc::new(Calculator)).unwrap();
        assert!(r.list().iter().any(|s| s.name == "calculator"));
        assert_eq!(
            r.register(Arc::new(Calculator)),
            Err(ToolError::Duplicate("calculator".into()))
        );
        assert_eq!(r.len(), 1);
        assert!(r.deregister("calculator"));
        let res = r.dispatch_one(&ToolCall::new("calculator", json!({"expression": "1"})));
        assert!(
            matches!(res.outcome, Outcome::Error { ref message } if message.contains("unknown tool"))
        );
    }

    #[test]
    fn roster_is_name_ordered() {
        let roster = fixture_registry().roster();
        let names: Vec<&str> = roster
            .lines()
            .map(|l| l.trim_start_matches("- ").split('(').next().unwrap())
            .collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert!(roster.contains("- calculator(expression: string): "));
        assert!(roster.contains("top_n?: integer"));
    }

    #[test]
    fn concurrent_web_searches_keep_order() {
        let r = fixture_registry();
        let out = r.dispatch(&[
            ToolCall::new(
                "web_search",
                json!({"query": "American Water Works 2015 revenue"}),
            ),
            ToolCall::new("web_search", json!({"query": "unknown query text"})),
        ]);
        assert!(out.iter().all(ToolResult::is_ok));
        assert_eq!(out[0].args["query"], "American Water Works 2015 revenue");
        assert_eq!(out[1].args["query"], "unknown query text");
    }
}
