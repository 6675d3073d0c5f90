//! Final answer generation against a standard coding-assistant backend.

use std::sync::Arc;

use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use crate::template::{PromptTemplate, TemplateError};

#[derive(Debug, Error)]
pub enum AnswerError {
    #[error("context is empty")]
    EmptyContext,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub struct AnswererBinding {
    backend: Arc<dyn ChatBackend>,
    template: PromptTemplate,
    system_preamble: String,
}

impl AnswererBinding {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        template: PromptTemplate,
        system_preamble: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        Ok(Self {
            backend,
            template: template.require_once("context")?,
            system_preamble: system_preamble.into(),
        })
    }

    pub fn request(&self, context: &str) -> ChatRequest {
        let mut messages = Vec::with_capacity(2);
        if !self.system_preamble.trim().is_empty() {
            messages.push(ChatMessage::system(self.system_preamble.clone()));
        }
        messages.push(ChatMessage::user(self.template.render(&[("context", context)])));
        ChatRequest::new(messages)
    }

    /// Returns the backend's completion text verbatim.
    pub fn answer(&self, context: &str) -> Result<String, AnswerError> {
        if context.trim().is_empty() {
            return Err(AnswerError::EmptyContext);
        }
        Ok(self.backend.complete(&self.request(context))?.text)
    }

    /// Baseline arm: the same binding given only the raw prompt.
    pub fn answer_baseline(&self, prompt: &str) -> Result<String, AnswerError> {
        self.answer(prompt)
    }
}
