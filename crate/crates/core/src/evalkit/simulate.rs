use std::collections::BTreeMap;
use std::sync::Arc;

use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::domain::{ClarificationResponses, ClarificationSet};
use crate::template::{defaults, PromptTemplate};

/// Answers clarification questions on behalf of a user whose intent is
/// known, so whole sessions can run without a person in the loop.
pub struct SimulatedUser {
    pub backend: Arc<dyn ChatBackend>,
    pub template: PromptTemplate,
}

impl SimulatedUser {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            template: PromptTemplate::new(defaults::SIMULATED_USER),
        }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn respond(
        &self,
        prompt: &str,
        intent: &str,
        set: &ClarificationSet,
    ) -> Result<ClarificationResponses, BackendError> {
        let questions: String = set
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{}. {}\n", i + 1, q.text))
            .collect();
        let body = self
            .template
            .render(&[("prompt", prompt), ("intent", intent), ("questions", questions.trim_end())]);
        let reply = self.backend.complete(&ChatRequest::user(body))?;
        let mut responses = ClarificationResponses::new(set.round_index);
        for (n, answer) in parse_numbered_answers(&reply.text) {
            if let Some(q) = n.checked_sub(1).and_then(|i| set.questions.get(i)) {
                responses = responses.with_answer(q.id.clone(), answer);
            }
        }
        Ok(responses)
    }
}

/// `N. text` or `N) text` lines, keyed by N. Answers reading `SKIP` and
/// empty answers are dropped; later duplicates of a number are ignored.
pub fn parse_numbered_answers(reply: &str) -> BTreeMap<usize, String> {
    let mut out = BTreeMap::new();
    for line in reply.lines() {
        let line = line.trim();
        let digits: String = line.chars().take_while(char::is_ascii_digit).collect();
        let Ok(n) = digits.parse::<usize>() else { continue };
        let rest = &line[digits.len()..];
        let Some(text) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) else {
            continue;
        };
        let text = text.trim();
        if text.is_empty() || text.trim_matches(|c: char| !c.is_alphanumeric()).eq_ignore_ascii_case("skip") {
            continue;
        }
        out.entry(n).or_insert_with(|| text.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendClient, BackendConfig, ManualClock, StubTransport};

    #[test]
    fn parses_and_skips() {
        let parsed = parse_numbered_answers("1. JSON\n2) SKIP\n3.\nnoise\n4. retry twice\n1. dup");
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[&1], "JSON");
        assert_eq!(parsed[&4], "retry twice");
    }

    #[test]
    fn maps_answers_to_question_ids() {
        let stub = StubTransport::always("1. The user object\n2. SKIP\n9. stray");
        let backend = Arc::new(
            BackendClient::new(BackendConfig::new("http://stub", "m"), Arc::new(stub), Arc::new(ManualClock::new()))
                .unwrap(),
        );
        let set = ClarificationSet::new(vec!["Return what?".into(), "On failure?".into()], 1, 3, chrono::Utc::now())
            .unwrap();
        let r = SimulatedUser::new(backend).respond("p", "intent", &set).unwrap();
        assert_eq!(r.answers.len(), 1);
        assert_eq!(r.answers["r1q1"], "The user object");
    }
}
