//! The sub-query ledger: answers are kept only when they can be traced to
//! a tool result, a retrieved chunk or a clarification in the episode.

use super::{ledger_key, AgentState, Event, SubQuery};
use crate::text::{normalize, numbers};
use crate::tools::Outcome;

/// Relative tolerance when matching an answer's numbers against evidence.
const NUMERIC_TOLERANCE: f64 = 0.005;

/// Texts an answer may be traced to.
pub(super) fn evidence(events: &[Event]) -> Vec<String> {
    let mut out = Vec::new();
    for e in events {
        match e {
            Event::RetrievedContext { context } => {
                out.extend(context.chunks.iter().map(|c| c.chunk.text.clone()))
            }
            Event::ToolResult { result, .. } => {
                if let Outcome::Ok { payload } = &result.outcome {
                    out.push(payload.to_string());
                    if let Some(s) = payload.as_str() {
                        out.push(s.to_string());
                    }
                    collect_strings(payload, &mut out);
                }
            }
            Event::ClarificationAnswer { text, .. } => out.push(text.clone()),
            _ => {}
        }
    }
    out
}

fn collect_strings(v: &serde_json::Value, out: &mut Vec<String>) {
    match v {
        serde_json::Value::String(s) => out.push(s.clone()),
        serde_json::Value::Array(a) => a.iter().for_each(|x| collect_strings(x, out)),
        serde_json::Value::Object(m) => m.values().for_each(|x| collect_strings(x, out)),
        _ => {}
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= NUMERIC_TOLERANCE * b.abs().max(f64::MIN_POSITIVE)
}

/// An answer is traceable when its normalized text occurs in some evidence
/// text, or when it contains numbers and each matches an evidence number
/// (directly or as a percentage of it) within 0.5%.
pub fn is_traceable(answer: &str, evidence: &[String]) -> bool {
    let a = normalize(answer);
    if a.is_empty() {
        return true;
    }
    if evidence.iter().any(|e| normalize(e).contains(&a)) {
        return true;
    }
    let wanted = numbers(answer);
    if wanted.is_empty() {
        return false;
    }
    let have: Vec<f64> = evidence.iter().flat_map(|e| numbers(e)).collect();
    wanted
        .iter()
        .all(|w| have.iter().any(|h| close(*w, *h) || close(*w, h * 100.0)))
}

/// Ledger entries with an answer that cannot be traced to `events`.
pub fn validate_ledger(events: &[Event], ledger: &[SubQuery]) -> Vec<String> {
    let ev = evidence(events);
    ledger
        .iter()
        .filter(|s| !s.answer.is_empty() && !is_traceable(&s.answer, &ev))
        .map(|s| format!("untraceable answer for `{}`: {}", s.query, s.answer))
        .collect()
}

fn slot<'a>(ledger: &'a mut Vec<SubQuery>, query: &str) -> &'a mut SubQuery {
    let key = ledger_key(query);
    match ledger.iter().position(|s| ledger_key(&s.query) == key) {
        Some(i) => &mut ledger[i],
        None => {
            ledger.push(SubQuery {
                query: query.trim().to_string(),
                answer: String::new(),
            });
            ledger.last_mut().expect("just pushed")
        }
    }
}

/// Folds the model's sub-queries into the ledger. Untraceable answers are
/// dropped; returns false if any were.
pub(super) fn merge(state: &mut AgentState, queries: &[SubQuery]) -> bool {
    let ev = evidence(state.episode());
    let mut clean = true;
    for q in queries {
        if q.query.trim().is_empty() {
            continue;
        }
        let answer = q.answer.trim();
        let entry = slot(&mut state.ledger, &q.query);
        if answer.is_empty() || answer == entry.answer {
            continue;
        }
        if is_traceable(answer, &ev) {
            entry.answer = answer.to_string();
        } else {
            clean = false;
        }
    }
    clean
}

/// Records an answer taken verbatim from a tool result or clarification.
pub(super) fn record(state: &mut AgentState, query: &str, answer: &str) {
    slot(&mut state.ledger, query).answer = answer.trim().to_string();
}

/// Budget-exhaustion answer: a plain statement plus what was found.
pub(super) fn partial_findings(state: &AgentState) -> String {
    let mut lines: Vec<String> = state
        .ledger
        .iter()
        .filter(|s| !s.answer.is_empty())
        .map(|s| format!("- {}: {}", s.query, s.answer))
        .collect();
    if lines.is_empty() {
        lines = state
            .episode()
            .iter()
            .filter_map(|e| match e {
                Event::ToolResult { result, .. } => match &result.outcome {
                    Outcome::Ok { payload } => Some(format!(
                        "- {}: {}",
                        result.tool_name,
                        super::summarize(payload)
                    )),
                    Outcome::Error { .. } => None,
                },
                _ => None,
            })
            .rev()
            .take(3)
            .collect();
        lines.reverse();
    }
    let head = "I could not reach a confident answer within the allotted budget.";
    if lines.is_empty() {
        head.to_string()
    } else {
        format!("{head}\n\nPartial findings:\n{}", lines.join("\n"))
    }
}
