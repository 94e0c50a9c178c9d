//! The agent's per-turn structured output and its tolerant parser.

use serde::{Deserialize, Serialize};

use crate::tools::ToolCall;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubQuery {
    pub query: String,
    #[serde(default)]
    pub answer: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaPlan {
    pub thought: String,
    pub tool_calls: Vec<ToolCall>,
    /// User-facing answer (markdown).
    pub audio: String,
    pub plan: String,
    pub queries: Vec<SubQuery>,
}

impl MetaPlan {
    pub fn is_final(&self) -> bool {
        self.tool_calls.is_empty() && !self.audio.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub message: String,
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Byte range of the first balanced `{...}` in `s`, honoring JSON strings.
fn object_span(s: &str) -> Option<(usize, usize)> {
    let start = s.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, start + i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Byte range of the first fenced block that contains an object, fences
/// included, plus the range of its body.
fn fence_span(s: &str) -> Option<((usize, usize), (usize, usize))> {
    let open = s.find("```")?;
    let after_ticks = open + 3;
    let body_start = after_ticks + s[after_ticks..].find('\n').map_or(0, |i| i + 1);
    let close_rel = s[body_start..].find("```")?;
    let body_end = body_start + close_rel;
    s[body_start..body_end]
        .contains('{')
        .then_some(((open, body_end + 3), (body_start, body_end)))
}

/// Parses a meta-plan from raw model output.
///
/// Code fences are stripped, missing fields default to empty, and any prose
/// outside the JSON object becomes the answer when `audio` is empty.
pub fn parse_meta_plan(raw: &str) -> Result<MetaPlan, ParseFailure> {
    let (outer, body) = match fence_span(raw) {
        Some((outer, body)) => (outer, &raw[body.0..body.1]),
        None => {
            let span = object_span(raw).ok_or_else(|| ParseFailure {
                message: "no JSON object found in the reply".into(),
            })?;
            (span, &raw[span.0..span.1])
        }
    };
    let json = match object_span(body) {
        Some((a, b)) => &body[a..b],
        None => body,
    };
    let mut plan: MetaPlan = serde_json::from_str(json).map_err(|e| ParseFailure {
        message: format!("invalid meta-plan JSON: {e}"),
    })?;
    if plan.audio.trim().is_empty() {
        let outside = format!("{}\n{}", &raw[..outer.0], &raw[outer.1..]);
        let outside = outside.trim();
        if !outside.is_empty() {
            plan.audio = outside.to_string();
        }
    }
    Ok(plan)
}
