//! Renders an episode's events into the agent's user prompt.

use serde_json::Value;

use super::{Event, SubQuery};
use crate::gateway::approx_tokens;
use crate::prompts::{
    H_CLARIFY_ANSWER, H_CLARIFY_REQUEST, H_CONTEXT, H_LEDGER, H_NOTICE, H_PLAN, H_QUESTION, H_TOOL,
};
use crate::tools::Outcome;

const TRUNCATED: &str = "[output truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Pinned,
    Tool,
    Plan,
}

struct Section {
    kind: Kind,
    header: String,
    body: String,
}

impl Section {
    fn render(&self) -> String {
        if self.body.is_empty() {
            self.header.clone()
        } else {
            format!("{}\n{}", self.header, self.body)
        }
    }
}

fn compact(v: &Value) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

fn sections(events: &[Event]) -> Vec<Section> {
    let pinned = |header: &str, body: String| Section {
        kind: Kind::Pinned,
        header: header.to_string(),
        body,
    };
    events
        .iter()
        .filter_map(|e| {
            Some(match e {
                Event::UserQuery { text } => pinned(H_QUESTION, text.trim().to_string()),
                Event::RetrievedContext { context } => {
                    let body = if context.is_empty() {
                        "(no documents retrieved)".to_string()
                    } else {
                        context.render()
                    };
                    pinned(H_CONTEXT, body)
                }
                Event::MetaPlan { plan, .. } => Section {
                    kind: Kind::Plan,
                    header: H_PLAN.to_string(),
                    body: serde_json::to_string(plan).unwrap_or_default(),
                },
                Event::ToolResult { result, .. } => {
                    let (status, body) = match &result.outcome {
                        Outcome::Ok { payload } => ("ok", compact(payload)),
                        Outcome::Error { message } => ("error", message.clone()),
                    };
                    Section {
                        kind: Kind::Tool,
                        header: format!(
                            "{H_TOOL} {} ({status})\nargs: {}",
                            result.tool_name,
                            compact(&Value::Object(result.args.clone()))
                        ),
                        body,
                    }
                }
                Event::ClarificationRequest { question, .. } => {
                    pinned(H_CLARIFY_REQUEST, question.clone())
                }
                Event::ClarificationAnswer { text, .. } => pinned(H_CLARIFY_ANSWER, text.clone()),
                Event::FinalAnswer { .. } => return None,
            })
        })
        .collect()
}

fn join(sections: &[Section], tail: &[String]) -> String {
    sections
        .iter()
        .map(Section::render)
        .chain(tail.iter().cloned())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Renders one episode. When the text exceeds `max_tokens`, tool payloads
/// are elided oldest first, then all but the latest meta-plan; the question,
/// retrieved context and clarifications are always kept.
pub fn render_history(events: &[Event], ledger: &[SubQuery], max_tokens: u64) -> String {
    let mut secs = sections(events);
    let mut tail = Vec::new();
    if ledger.iter().any(|s| !s.answer.is_empty()) {
        let lines: Vec<String> = ledger
            .iter()
            .map(|s| {
                let answer = if s.answer.is_empty() {
                    "(pending)"
                } else {
                    s.answer.as_str()
                };
                format!("- {}: {}", s.query, answer)
            })
            .collect();
        tail.push(format!("{H_LEDGER}\n{}", lines.join("\n")));
    }
    let mut text = join(&secs, &tail);
    if approx_tokens(&text) <= max_tokens {
        return text;
    }
    let last_plan = secs.iter().rposition(|s| s.kind == Kind::Plan);
    let order: Vec<usize> = (0..secs.len())
        .filter(|&i| secs[i].kind == Kind::Tool)
        .chain((0..secs.len()).filter(|&i| secs[i].kind == Kind::Plan && Some(i) != last_plan))
        .collect();
    tail.push(format!(
        "{H_NOTICE}\nOlder tool output was truncated to fit the context budget."
    ));
    for i in order {
        secs[i].body = TRUNCATED.to_string();
        text = join(&secs, &tail);
        if approx_tokens(&text) <= max_tokens {
            break;
        }
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::MetaPlan;
    use crate::retriever::{ContextSet, QueryFanout, RetrievalTrace};
    use crate::tools::{ToolCall, ToolResult};
    use serde_json::json;

    fn empty_context() -> ContextSet {
        ContextSet {
            chunks: Vec::new(),
            fanout: QueryFanout::default(),
            trace: RetrievalTrace::default(),
        }
    }

    fn tool(i: usize) -> Event {
        let call = ToolCall::new("web_search", json!({"query": format!("q{i}")}));
        Event::ToolResult {
            iteration: i,
            result: ToolResult {
                tool_name: call.name.clone(),
                args: call.args.clone(),
                outcome: Outcome::Ok {
                    payload: json!({"text": format!("payload{i} ").repeat(200)}),
                },
                latency: 0.0,
            },
            sub_query: None,
        }
    }

    #[test]
    fn headers_and_order() {
        let events = vec![
            Event::UserQuery {
                text: "What was revenue?".into(),
            },
            Event::RetrievedContext {
                context: empty_context(),
            },
            Event::MetaPlan {
                iteration: 1,
                plan: MetaPlan::default(),
                repaired: false,
            },
            tool(1),
        ];
        let h = render_history(&events, &[], 100_000);
        let q = h.find(H_QUESTION).unwrap();
        let c = h.find(H_CONTEXT).unwrap();
        let p = h.find(H_PLAN).unwrap();
        let t = h.find("TOOL RESULT web_search (ok)").unwrap();
        assert!(q < c && c < p && p < t);
        assert!(h.starts_with("USER QUESTION:\nWhat was revenue?\n\n"));
    }

    #[test]
    fn truncates_oldest_tool_payload_first() {
        let mut events = vec![
            Event::UserQuery {
                text: "keep me".into(),
            },
            Event::RetrievedContext {
                context: empty_context(),
            },
        ];
        events.extend((1..=3).map(tool));
        let full = render_history(&events, &[], u64::MAX);
        let budget = approx_tokens(&full) - 150;
        let h = render_history(&events, &[], budget);
        assert!(!h.contains("payload1"));
        assert!(h.contains("payload2") && h.contains("payload3"));
        assert!(h.contains("keep me") && h.contains("(no documents retrieved)"));
        let tiny = render_history(&events, &[], 1);
        assert!(tiny.contains("keep me"));
        assert_eq!(tiny.matches(TRUNCATED).count(), 3);
    }

    #[test]
    fn ledger_rendered_when_answered() {
        let events = vec![Event::UserQuery { text: "q".into() }];
        let ledger = vec![
            SubQuery {
                query: "2015 value".into(),
                answer: "45.45".into(),
            },
            SubQuery {
                query: "2014 value".into(),
                answer: String::new(),
            },
        ];
        let h = render_history(&events, &ledger, u64::MAX);
        assert!(h.contains("SUB-QUERY ANSWERS:\n- 2015 value: 45.45\n- 2014 value: (pending)"));
        assert!(!render_history(&events, &ledger[1..], u64::MAX).contains(H_LEDGER));
    }
}
