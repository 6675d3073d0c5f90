use std::time::Instant;

use thiserror::Error;
use tracing::{debug, info};

use super::{ClarifierBinding, ClarifyError};
use crate::answering::AnswererBinding;
use crate::classifier::ClassifierBinding;
use crate::domain::{
    assemble_context, transition, ClarificationResponses, ClarificationSet, DialogueState, IllegalTransition,
    PipelineEvent, Status, UserPrompt,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Illegal(#[from] IllegalTransition),
    #[error("recording event: {0}")]
    Sink(String),
}

/// Receives every event right after it has been applied.
pub trait EventSink {
    fn record(&mut self, event: &PipelineEvent, state: &DialogueState) -> Result<(), String>;
}

pub struct NullSink;

impl EventSink for NullSink {
    fn record(&mut self, _: &PipelineEvent, _: &DialogueState) -> Result<(), String> {
        Ok(())
    }
}

impl EventSink for Vec<PipelineEvent> {
    fn record(&mut self, event: &PipelineEvent, _: &DialogueState) -> Result<(), String> {
        self.push(event.clone());
        Ok(())
    }
}

impl EventSink for Vec<(PipelineEvent, DialogueState)> {
    fn record(&mut self, event: &PipelineEvent, state: &DialogueState) -> Result<(), String> {
        self.push((event.clone(), state.clone()));
        Ok(())
    }
}

fn elapsed_ms(started: Instant) -> u64 {
    started.elapsed().as_millis() as u64
}

/// Drives sessions through classify, clarify and answer stages. Holds no
/// per-session state: every call takes and returns a [`DialogueState`].
pub struct SessionEngine {
    pub classifier: ClassifierBinding,
    pub clarifier: ClarifierBinding,
    pub answerer: AnswererBinding,
    pub max_rounds: u32,
}

impl SessionEngine {
    fn emit(
        &self,
        state: DialogueState,
        event: PipelineEvent,
        sink: &mut dyn EventSink,
    ) -> Result<DialogueState, EngineError> {
        let next = transition(&state, &event)?;
        debug!(session = %next.session_id, event = event.name(), status = %next.status, "transition");
        sink.record(&event, &next).map_err(EngineError::Sink)?;
        Ok(next)
    }

    /// Creates a session and runs it until it needs the user or finishes.
    pub fn start(
        &self,
        session_id: impl Into<String>,
        prompt: UserPrompt,
        sink: &mut dyn EventSink,
    ) -> Result<DialogueState, EngineError> {
        let state = DialogueState::new(session_id, prompt.clone(), self.max_rounds);
        let state = self.emit(
            state,
            PipelineEvent::PromptSubmitted {
                prompt,
                max_rounds: self.max_rounds,
            },
            sink,
        )?;
        self.advance(state, sink)
    }

    /// Folds the user's answers in and resumes the loop.
    pub fn respond(
        &self,
        state: DialogueState,
        responses: ClarificationResponses,
        sink: &mut dyn EventSink,
    ) -> Result<DialogueState, EngineError> {
        let state = self.emit(state, PipelineEvent::UserResponded { responses }, sink)?;
        self.advance(state, sink)
    }

    /// Runs stages until the session is waiting on the user or terminal.
    pub fn advance(&self, mut state: DialogueState, sink: &mut dyn EventSink) -> Result<DialogueState, EngineError> {
        loop {
            let event = match state.status {
                Status::New => PipelineEvent::PromptSubmitted {
                    prompt: state.prompt.clone(),
                    max_rounds: state.max_rounds,
                },
                Status::AwaitingUserClarification | Status::Answered | Status::Aborted => return Ok(state),
                Status::AwaitingClassification if state.clarification_pending() => {
                    if state.round_count >= state.max_rounds {
                        info!(session = %state.session_id, rounds = state.round_count, "round threshold reached, answering best-effort");
                        PipelineEvent::ThresholdReached
                    } else {
                        let started = Instant::now();
                        match self
                            .clarifier
                            .generate_questions(&assemble_context(&state), state.round_count + 1)
                        {
                            Ok(set) => PipelineEvent::QuestionsGenerated {
                                set,
                                duration_ms: elapsed_ms(started),
                            },
                            Err(ClarifyError::NoQuestionsParsed) => {
                                info!(session = %state.session_id, "no questions parsed, answering best-effort");
                                PipelineEvent::ThresholdReached
                            }
                            Err(e) => PipelineEvent::BackendFailed {
                                reason: format!("clarify: {e}"),
                            },
                        }
                    }
                }
                Status::AwaitingClassification => {
                    let started = Instant::now();
                    match self.classifier.classify(&assemble_context(&state)) {
                        Ok(assessment) => PipelineEvent::Classified {
                            assessment,
                            duration_ms: elapsed_ms(started),
                        },
                        Err(e) => PipelineEvent::BackendFailed {
                            reason: format!("classify: {e}"),
                        },
                    }
                }
                Status::Answering => {
                    let started = Instant::now();
                    match self.answerer.answer(&assemble_context(&state)) {
                        Ok(text) => PipelineEvent::AnswerProduced {
                            text,
                            duration_ms: elapsed_ms(started),
                        },
                        Err(e) => PipelineEvent::BackendFailed {
                            reason: format!("answer: {e}"),
                        },
                    }
                }
            };
            state = self.emit(state, event, sink)?;
        }
    }
}

/// Runs a whole session, asking `respond` for the user's answers whenever
/// questions are generated.
pub fn run_session(
    engine: &SessionEngine,
    session_id: impl Into<String>,
    prompt: UserPrompt,
    mut respond: impl FnMut(&ClarificationSet) -> ClarificationResponses,
    sink: &mut dyn EventSink,
) -> Result<DialogueState, EngineError> {
    let mut state = engine.start(session_id, prompt, sink)?;
    while state.status == Status::AwaitingUserClarification {
        let set = state.pending_questions().expect("awaiting state has questions").clone();
        let responses = respond(&set);
        state = engine.respond(state, responses, sink)?;
    }
    Ok(state)
}
