//! Clarification over a line-oriented terminal.

use std::io::{BufRead, Write};
use std::sync::Mutex;

use mhrag_core::agent::{
    ClarificationChannel, ClarificationReply, ReplySource, AUTO_CLARIFICATION,
};

/// Prints the question and reads one line as the answer. End of input
/// yields the automatic reply.
pub struct LineClarifier<R, W> {
    io: Mutex<(R, W)>,
}

impl<R: BufRead, W: Write> LineClarifier<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self {
            io: Mutex::new((input, output)),
        }
    }

    /// Writes `prompt` and reads a trimmed line; `None` at end of input.
    pub fn prompt(&self, prompt: &str) -> Option<String> {
        let mut io = self.io.lock().unwrap_or_else(|e| e.into_inner());
        let (input, output) = &mut *io;
        let _ = write!(output, "{prompt}");
        let _ = output.flush();
        let mut line = String::new();
        match input.read_line(&mut line) {
            Ok(n) if n > 0 => Some(line.trim().to_string()),
            _ => None,
        }
    }

    pub fn say(&self, text: &str) {
        let mut io = self.io.lock().unwrap_or_else(|e| e.into_inner());
        let _ = writeln!(io.1, "{text}");
        let _ = io.1.flush();
    }

    pub fn into_inner(self) -> (R, W) {
        self.io.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl<R: BufRead + Send, W: Write + Send> ClarificationChannel for LineClarifier<R, W> {
    fn ask(&self, id: u64, question: &str, announce: &mut dyn FnMut()) -> ClarificationReply {
        announce();
        let mut io = self.io.lock().unwrap_or_else(|e| e.into_inner());
        let (input, output) = &mut *io;
        let _ = write!(output, "[clarify #{id}] {question}\n? ");
        let _ = output.flush();
        let mut line = String::new();
        match input.read_line(&mut line) {
            Ok(n) if n > 0 && !line.trim().is_empty() => ClarificationReply {
                text: line.trim().to_string(),
                source: ReplySource::User,
            },
            _ => ClarificationReply::auto(AUTO_CLARIFICATION),
        }
    }
}
