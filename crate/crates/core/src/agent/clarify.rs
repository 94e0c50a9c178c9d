//! Channels that answer the agent's clarification requests.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, PoisonError};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AUTO_CLARIFICATION: &str = "no clarification available";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySource {
    User,
    Auto,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClarificationReply {
    pub text: String,
    pub source: ReplySource,
}

impl ClarificationReply {
    pub fn auto(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            source: ReplySource::Auto,
        }
    }
}

pub trait ClarificationChannel: Send + Sync {
    /// Registers request `id`, calls `announce` (which publishes the request
    /// event), then blocks until a reply is available.
    fn ask(&self, id: u64, question: &str, announce: &mut dyn FnMut()) -> ClarificationReply;
}

/// Batch-mode responder: answers every request immediately with fixed text.
#[derive(Debug, Clone)]
pub struct AutoResponder {
    text: String,
}

impl AutoResponder {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl Default for AutoResponder {
    fn default() -> Self {
        Self::new(AUTO_CLARIFICATION)
    }
}

impl ClarificationChannel for AutoResponder {
    fn ask(&self, _id: u64, _question: &str, announce: &mut dyn FnMut()) -> ClarificationReply {
        announce();
        ClarificationReply::auto(self.text.clone())
    }
}

/// Replies from a queue, as if typed by a user; auto-responds once empty.
#[derive(Debug, Default)]
pub struct ScriptedResponder {
    answers: Mutex<VecDeque<String>>,
    fallback: AutoResponder,
}

impl ScriptedResponder {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            answers: Mutex::new(answers.into_iter().map(Into::into).collect()),
            fallback: AutoResponder::default(),
        }
    }
}

impl ClarificationChannel for ScriptedResponder {
    fn ask(&self, id: u64, question: &str, announce: &mut dyn FnMut()) -> ClarificationReply {
        let next = self
            .answers
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .pop_front();
        match next {
            Some(text) => {
                announce();
                ClarificationReply {
                    text,
                    source: ReplySource::User,
                }
            }
            None => self.fallback.ask(id, question, announce),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClarifyError {
    #[error("no clarification is pending")]
    NonePending,
    #[error("clarification {given} is stale; pending request is {pending}")]
    Stale { given: u64, pending: u64 },
}

#[derive(Debug, Default)]
struct Slot {
    pending: Option<(u64, String)>,
    answer: Option<String>,
    closed: bool,
}

/// Waits for an external answer (HTTP client, terminal) with a timeout.
/// At most one request is pending at a time.
#[derive(Debug)]
pub struct InteractiveChannel {
    slot: Mutex<Slot>,
    cv: Condvar,
    timeout: Duration,
    fallback: String,
}

impl InteractiveChannel {
    pub fn new(timeout: Duration) -> Self {
        Self {
            slot: Mutex::new(Slot::default()),
            cv: Condvar::new(),
            timeout,
            fallback: AUTO_CLARIFICATION.to_string(),
        }
    }

    /// The pending request id and question, if any.
    pub fn pending(&self) -> Option<(u64, String)> {
        self.lock().pending.clone()
    }

    /// Resolves the pending request. `id` guards against answering a request
    /// that has since been replaced or timed out.
    pub fn answer(&self, id: Option<u64>, text: impl Into<String>) -> Result<u64, ClarifyError> {
        let mut slot = self.lock();
        let pending = match &slot.pending {
            Some((p, _)) if slot.answer.is_none() => *p,
            _ => return Err(ClarifyError::NonePending),
        };
        if let Some(given) = id.filter(|g| *g != pending) {
            return Err(ClarifyError::Stale { given, pending });
        }
        slot.answer = Some(text.into());
        self.cv.notify_all();
        Ok(pending)
    }

    /// Unblocks any waiter with the timeout reply; later requests time out
    /// immediately.
    pub fn close(&self) {
        self.lock().closed = true;
        self.cv.notify_all();
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Slot> {
        self.slot.lock().unwrap_or_else(PoisonError::into_inner)
    }
}

impl ClarificationChannel for InteractiveChannel {
    fn ask(&self, id: u64, question: &str, announce: &mut dyn FnMut()) -> ClarificationReply {
        {
            let mut slot = self.lock();
            slot.pending = Some((id, question.to_string()));
            slot.answer = None;
        }
        announce();
        let slot = self.lock();
        let (mut slot, _) = self
            .cv
            .wait_timeout_while(slot, self.timeout, |s| s.answer.is_none() && !s.closed)
            .unwrap_or_else(PoisonError::into_inner);
        slot.pending = None;
        match slot.answer.take() {
            Some(text) => ClarificationReply {
                text,
                source: ReplySource::User,
            },
            None => ClarificationReply {
                text: self.fallback.clone(),
                source: ReplySource::Timeout,
            },
        }
    }
}
