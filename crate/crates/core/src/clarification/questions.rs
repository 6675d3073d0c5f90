use std::collections::HashSet;
use std::sync::Arc;

use chrono::Utc;
use thiserror::Error;
use tracing::warn;

use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::domain::{ClarificationSet, DEFAULT_MAX_QUESTIONS_PER_ROUND};
use crate::template::{PromptTemplate, TemplateError};

#[derive(Debug, Error)]
pub enum ClarifyError {
    #[error("context is empty")]
    EmptyContext,
    #[error("round index must be >= 1")]
    InvalidRound,
    #[error("no questions could be parsed from the reply")]
    NoQuestionsParsed,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub struct ClarifierBinding {
    backend: Arc<dyn ChatBackend>,
    template: PromptTemplate,
    max_questions_per_round: usize,
}

impl ClarifierBinding {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        template: PromptTemplate,
        max_questions_per_round: usize,
    ) -> Result<Self, TemplateError> {
        Ok(Self {
            backend,
            template: template.require_once("context")?,
            max_questions_per_round: max_questions_per_round.max(1),
        })
    }

    pub fn with_defaults(backend: Arc<dyn ChatBackend>) -> Self {
        Self::new(
            backend,
            PromptTemplate::new(crate::template::defaults::CLARIFIER),
            DEFAULT_MAX_QUESTIONS_PER_ROUND,
        )
        .expect("default clarifier template is valid")
    }

    pub fn max_questions_per_round(&self) -> usize {
        self.max_questions_per_round
    }

    /// One templated request; an unparseable reply is retried once.
    pub fn generate_questions(&self, context: &str, round_index: u32) -> Result<ClarificationSet, ClarifyError> {
        if context.trim().is_empty() {
            return Err(ClarifyError::EmptyContext);
        }
        if round_index == 0 {
            return Err(ClarifyError::InvalidRound);
        }
        let request = ChatRequest::user(self.template.render(&[("context", context)]));
        for attempt in 0..2 {
            let reply = self.backend.complete(&request)?;
            let questions = parse_questions(&reply.text, self.max_questions_per_round);
            if !questions.is_empty() {
                return Ok(ClarificationSet::new(questions, round_index, self.max_questions_per_round, Utc::now())
                    .expect("parsed questions satisfy set invariants"));
            }
            warn!(attempt, "clarifier reply yielded no questions");
        }
        Err(ClarifyError::NoQuestionsParsed)
    }
}

fn strip_marker(line: &str) -> Option<&str> {
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return Some(rest);
        }
    }
    None
}

/// Extracts questions from numbered lists, bulleted lists, and bare lines
/// ending in `?`. Duplicates are dropped and at most `max` are kept.
pub fn parse_questions(reply: &str, max: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in reply.lines() {
        let line = line.trim();
        let item = match strip_marker(line) {
            Some(rest) => rest.trim(),
            None if line.ends_with('?') => line,
            None => continue,
        };
        let item = item.trim_matches('*').trim();
        if item.is_empty() || !seen.insert(item.to_string()) {
            continue;
        }
        out.push(item.to_string());
        if out.len() == max {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendClient, BackendConfig, ManualClock, StubReply, StubTransport};

    fn binding(stub: StubTransport) -> ClarifierBinding {
        let client = BackendClient::new(BackendConfig::new("http://stub", "m"), Arc::new(stub), Arc::new(ManualClock::new())).unwrap();
        ClarifierBinding::with_defaults(Arc::new(client))
    }

    #[test]
    fn numbered_reply_in_order() {
        let b = binding(StubTransport::always("1. What should the function return?\n2. Which language version?"));
        let set = b.generate_questions("ctx", 1).unwrap();
        let texts: Vec<_> = set.questions.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(texts, ["What should the function return?", "Which language version?"]);
        assert_eq!(set.questions[0].id, "r1q1");
        assert_eq!(set.round_index, 1);
    }

    #[test]
    fn truncates_to_max() {
        let b = binding(StubTransport::always("1. a?\n2. b?\n3. c?\n4. d?\n5. e?"));
        let set = b.generate_questions("ctx", 2).unwrap();
        assert_eq!(set.questions.len(), 3);
        assert_eq!(set.questions[2].text, "c?");
        assert_eq!(set.questions[0].id, "r2q1");
    }

    #[test]
    fn accepts_bullets_and_bare_questions() {
        let reply = "Here are my questions:\n- What format is the input?\n* Should it be async?\nIs this for Node?\nThanks.";
        assert_eq!(
            parse_questions(reply, 5),
            ["What format is the input?", "Should it be async?", "Is this for Node?"]
        );
        assert_eq!(parse_questions("1) **Which DB?**\n1) **Which DB?**", 5), ["Which DB?"]);
    }

    #[test]
    fn retries_once_then_reports() {
        let stub = StubTransport::scripted(vec![StubReply::text("I cannot help."), StubReply::text("1. Why?")]);
        assert_eq!(binding(stub).generate_questions("ctx", 1).unwrap().questions.len(), 1);

        let stub = StubTransport::always("No questions here.");
        let calls = stub.call_counter();
        assert!(matches!(binding(stub).generate_questions("ctx", 1), Err(ClarifyError::NoQuestionsParsed)));
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn preconditions() {
        let b = binding(StubTransport::always("1. x?"));
        assert!(matches!(b.generate_questions("", 1), Err(ClarifyError::EmptyContext)));
        assert!(matches!(b.generate_questions("c", 0), Err(ClarifyError::InvalidRound)));
    }
}
