//! Versioned prompt templates and the user-message layouts that go with them.
//!
//! The template files live in `prompts/`; bump the file version when a
//! template changes so traces and reports stay attributable.

pub const QUERY_FANOUT: &str = include_str!("../prompts/query_fanout.v1.txt");
pub const QUERY_FANOUT_VERSION: &str = "query_fanout.v1";
pub const HYPOTHETICAL: &str = include_str!("../prompts/hypothetical.v1.txt");
pub const HYPOTHETICAL_VERSION: &str = "hypothetical.v1";
pub const AGENT_SYSTEM: &str = include_str!("../prompts/agent_system.v1.txt");
pub const AGENT_SYSTEM_VERSION: &str = "agent_system.v1";
pub const JUDGE_CLAIMS: &str = include_str!("../prompts/judge_claims.v1.txt");
pub const JUDGE_SUPPORT: &str = include_str!("../prompts/judge_support.v1.txt");

pub const QUESTION_PREFIX: &str = "Question: ";
pub const COUNT_PREFIX: &str = "Number of queries: ";
pub const TEXT_PREFIX: &str = "Text:\n";

pub fn fanout_user(question: &str, n: usize) -> String {
    format!("{QUESTION_PREFIX}{question}\n{COUNT_PREFIX}{n}")
}

pub fn hypothetical_user(question: &str) -> String {
    format!("{QUESTION_PREFIX}{question}")
}

/// Recovers `(question, count)` from a fanout or hypothetical user message.
pub fn parse_question(user: &str) -> (String, Option<usize>) {
    let mut question = String::new();
    let mut count = None;
    for line in user.lines() {
        if let Some(q) = line.strip_prefix(QUESTION_PREFIX) {
            question = q.trim().to_string();
        } else if let Some(n) = line.strip_prefix(COUNT_PREFIX) {
            count = n.trim().parse().ok();
        }
    }
    (question, count)
}

/// Section headers of the rendered agent history.
pub const H_QUESTION: &str = "USER QUESTION:";
pub const H_CONTEXT: &str = "RETRIEVED CONTEXT:";
pub const H_TOOL: &str = "TOOL RESULT";
pub const H_CLARIFY_REQUEST: &str = "CLARIFICATION REQUEST:";
pub const H_CLARIFY_ANSWER: &str = "CLARIFICATION ANSWER:";
pub const H_PLAN: &str = "PREVIOUS META-PLAN:";
pub const H_NOTICE: &str = "NOTICE:";
pub const H_LEDGER: &str = "SUB-QUERY ANSWERS:";
