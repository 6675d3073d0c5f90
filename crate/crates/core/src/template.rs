//! Prompt templates with `{name}` slots.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template must contain slot {{{slot}}} exactly once, found {found}")]
    SlotCount { slot: String, found: usize },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        std::fs::read_to_string(path)
            .map(Self::new)
            .map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn slot_count(&self, slot: &str) -> usize {
        self.text.matches(&format!("{{{slot}}}")).count()
    }

    pub fn require_once(self, slot: &str) -> Result<Self, TemplateError> {
        match self.slot_count(slot) {
            1 => Ok(self),
            found => Err(TemplateError::SlotCount {
                slot: slot.to_string(),
                found,
            }),
        }
    }

    /// Substitutes every listed slot. Values are inserted verbatim and are not
    /// themselves scanned for slots.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        'scan: while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            for (name, value) in values {
                let slot = format!("{{{name}}}");
                if tail.starts_with(&slot) {
                    out.push_str(value);
                    rest = &tail[slot.len()..];
                    continue 'scan;
                }
            }
            out.push('{');
            rest = &tail[1..];
        }
        out.push_str(rest);
        out
    }
}

pub mod defaults {
    pub const CLASSIFIER: &str = include_str!("../templates/classify.txt");
    pub const CLARIFIER: &str = include_str!("../templates/clarify.txt");
    pub const ANSWERER: &str = include_str!("../templates/answer.txt");
    pub const SIMULATED_USER: &str = include_str!("../templates/simulate_user.txt");
    pub const DATAGEN_CLASSIFIER: &str = include_str!("../templates/datagen_classifier.txt");
    pub const DATAGEN_CODE_ONLY: &str = include_str!("../templates/datagen_code_only.txt");
    pub const DATAGEN_NATURAL_LANGUAGE: &str = include_str!("../templates/datagen_natural_language.txt");
    pub const STUDY_INSTRUCTIONS: &str = include_str!("../templates/study_instructions.md");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_known_slots_only() {
        let t = PromptTemplate::new("Q: {context} / {other} / {");
        assert_eq!(t.render(&[("context", "x {context}")]), "Q: x {context} / {other} / {");
    }

    #[test]
    fn slot_must_appear_once() {
        assert!(PromptTemplate::new("no slot").require_once("context").is_err());
        assert!(PromptTemplate::new("{context}{context}").require_once("context").is_err());
        assert!(PromptTemplate::new("a {context} b").require_once("context").is_ok());
    }

    #[test]
    fn shipped_templates_have_their_slots() {
        for t in [defaults::CLASSIFIER, defaults::CLARIFIER, defaults::ANSWERER] {
            assert_eq!(PromptTemplate::new(t).slot_count("context"), 1);
        }
        let sim = PromptTemplate::new(defaults::SIMULATED_USER);
        for slot in ["prompt", "intent", "questions"] {
            assert_eq!(sim.slot_count(slot), 1, "{slot}");
        }
        for t in [defaults::DATAGEN_CLASSIFIER, defaults::DATAGEN_CODE_ONLY, defaults::DATAGEN_NATURAL_LANGUAGE] {
            assert_eq!(PromptTemplate::new(t).slot_count("index"), 1);
        }
    }
}
