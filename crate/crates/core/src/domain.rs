//! Session domain types and the dialogue state machine.
//!
//! A session moves through classification, optional clarification rounds and
//! a final answer. [`transition`] is the only way to advance a
//! [`DialogueState`]; every input arrives as a [`PipelineEvent`] so that the
//! whole lifecycle can be persisted and replayed.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on clarification rounds per session.
pub const DEFAULT_MAX_ROUNDS: u32 = 3;
/// Default lowest clarity level that is routed straight to answering.
pub const DEFAULT_CLEAR_MIN_LEVEL: u8 = 3;
/// Default cap on questions generated in one round.
pub const DEFAULT_MAX_QUESTIONS_PER_ROUND: usize = 3;

/// Version tag of the transcript layout produced by [`assemble_context`].
pub const TRANSCRIPT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("clarity level {0} is outside 1..=4")]
    InvalidLevel(i64),
    #[error("clear_min_level {0} must be 2, 3 or 4")]
    InvalidThreshold(u8),
    #[error("clarification set has no questions")]
    NoQuestions,
    #[error("clarification set has {got} questions, max is {max}")]
    TooManyQuestions { got: usize, max: usize },
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("round index must be >= 1")]
    InvalidRoundIndex,
}

/// A prompt as submitted by the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPrompt {
    pub text: String,
    pub contains_code: bool,
    pub submitted_at: DateTime<Utc>,
}

impl UserPrompt {
    pub fn new(text: impl Into<String>, submitted_at: DateTime<Utc>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyPrompt);
        }
        let contains_code = looks_like_code(&text);
        Ok(Self {
            text,
            contains_code,
            submitted_at,
        })
    }

    pub fn now(text: impl Into<String>) -> Result<Self, DomainError> {
        Self::new(text, Utc::now())
    }
}

/// Fenced blocks, indented blocks, or lines carrying statement punctuation.
pub fn looks_like_code(text: &str) -> bool {
    if text.contains("```") {
        return true;
    }
    text.lines().any(is_code_line)
}

pub(crate) fn is_code_line(line: &str) -> bool {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return false;
    }
    if line.starts_with("    ") || line.starts_with('\t') {
        return true;
    }
    const MARKERS: [&str; 7] = ["{", "}", ";", "=>", "//", "/*", "):"];
    const KEYWORDS: [&str; 8] = ["#include", "def ", "fn ", "function ", "import ", "return ", "class ", "const "];
    let head = trimmed
        .trim_start_matches("export ")
        .trim_start_matches("pub ")
        .trim_start_matches("async ");
    MARKERS.iter().any(|m| trimmed.contains(m)) || KEYWORDS.iter().any(|k| head.starts_with(k))
}

/// Clarity of a prompt on a 4-point scale; 1 is severely under-specified,
/// 4 is fully specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct ClarityLevel(u8);

impl ClarityLevel {
    pub const MIN: ClarityLevel = ClarityLevel(1);
    pub const MAX: ClarityLevel = ClarityLevel(4);

    pub fn new(level: i64) -> Result<Self, DomainError> {
        if (1..=4).contains(&level) {
            Ok(Self(level as u8))
        } else {
            Err(DomainError::InvalidLevel(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> [ClarityLevel; 4] {
        [Self(1), Self(2), Self(3), Self(4)]
    }
}

impl TryFrom<i64> for ClarityLevel {
    type Error = DomainError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ClarityLevel> for u8 {
    fn from(value: ClarityLevel) -> Self {
        value.0
    }
}

impl fmt::Display for ClarityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Cut point between "clarify" and "answer" on the clarity scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClarityThreshold(u8);

impl ClarityThreshold {
    pub fn new(clear_min_level: u8) -> Result<Self, DomainError> {
        if (2..=4).contains(&clear_min_level) {
            Ok(Self(clear_min_level))
        } else {
            Err(DomainError::InvalidThreshold(clear_min_level))
        }
    }

    pub fn clear_min_level(self) -> u8 {
        self.0
    }

    pub fn route(self, level: ClarityLevel) -> Route {
        if level.get() >= self.0 {
            Route::Answer
        } else {
            Route::Clarify
        }
    }

    pub fn is_clear(self, level: ClarityLevel) -> bool {
        self.route(level) == Route::Answer
    }
}

impl Default for ClarityThreshold {
    fn default() -> Self {
        Self(DEFAULT_CLEAR_MIN_LEVEL)
    }
}

impl TryFrom<u8> for ClarityThreshold {
    type Error = DomainError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ClarityThreshold> for u8 {
    fn from(value: ClarityThreshold) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Answer,
    Clarify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentSource {
    ModelBackend,
    Heuristic,
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarityAssessment {
    pub level: ClarityLevel,
    pub route: Route,
    pub source: AssessmentSource,
}

impl ClarityAssessment {
    pub fn new(level: ClarityLevel, threshold: ClarityThreshold, source: AssessmentSource) -> Self {
        Self {
            level,
            route: threshold.route(level),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationSet {
    pub questions: Vec<Question>,
    pub generated_at: DateTime<Utc>,
    pub round_index: u32,
}

impl ClarificationSet {
    /// Builds a set whose question ids are `r{round}q{n}`, unique within a
    /// session because round indices are.
    pub fn new(
        texts: Vec<String>,
        round_index: u32,
        max_questions: usize,
        generated_at: DateTime<Utc>,
    ) -> Result<Self, DomainError> {
        if round_index == 0 {
            return Err(DomainError::InvalidRoundIndex);
        }
        if texts.is_empty() {
            return Err(DomainError::NoQuestions);
        }
        if texts.len() > max_questions {
            return Err(DomainError::TooManyQuestions {
                got: texts.len(),
                max: max_questions,
            });
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(DomainError::EmptyQuestion);
        }
        let questions = texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| Question {
                id: format!("r{round_index}q{}", i + 1),
                text,
            })
            .collect();
        Ok(Self {
            questions,
            generated_at,
            round_index,
        })
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

/// The user's answers to one round; may cover any subset of the questions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationResponses {
    pub answers: BTreeMap<String, String>,
    pub round_index: u32,
}

impl ClarificationResponses {
    pub fn new(round_index: u32) -> Self {
        Self {
            answers: BTreeMap::new(),
            round_index,
        }
    }

    pub fn with_answer(mut self, question_id: impl Into<String>, text: impl Into<String>) -> Self {
        self.answers.insert(question_id.into(), text.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub assessment: ClarityAssessment,
    pub clarification: Option<ClarificationSet>,
    pub responses: Option<ClarificationResponses>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    New,
    AwaitingClassification,
    AwaitingUserClarification,
    Answering,
    Answered,
    Aborted,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Answered | Status::Aborted)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::New => "new",
            Status::AwaitingClassification => "awaiting_classification",
            Status::AwaitingUserClarification => "awaiting_user_clarification",
            Status::Answering => "answering",
            Status::Answered => "answered",
            Status::Aborted => "aborted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Classify,
    Clarify,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub duration_ms: u64,
}

/// Inputs to the state machine. Stage-producing events carry the measured
/// stage duration so that replaying a log reproduces the timings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PipelineEvent {
    PromptSubmitted {
        prompt: UserPrompt,
        max_rounds: u32,
    },
    Classified {
        assessment: ClarityAssessment,
        duration_ms: u64,
    },
    QuestionsGenerated {
        set: ClarificationSet,
        duration_ms: u64,
    },
    UserResponded {
        responses: ClarificationResponses,
    },
    AnswerProduced {
        text: String,
        duration_ms: u64,
    },
    ThresholdReached,
    BackendFailed {
        reason: String,
    },
}

impl PipelineEvent {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineEvent::PromptSubmitted { .. } => "PromptSubmitted",
            PipelineEvent::Classified { .. } => "Classified",
            PipelineEvent::QuestionsGenerated { .. } => "QuestionsGenerated",
            PipelineEvent::UserResponded { .. } => "UserResponded",
            PipelineEvent::AnswerProduced { .. } => "AnswerProduced",
            PipelineEvent::ThresholdReached => "ThresholdReached",
            PipelineEvent::BackendFailed { .. } => "BackendFailed",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("illegal transition: {event} in state {status}: {detail}")]
pub struct IllegalTransition {
    pub status: Status,
    pub event: &'static str,
    pub detail: String,
}

/// Full lifecycle of one chat session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub session_id: String,
    pub prompt: UserPrompt,
    pub max_rounds: u32,
    pub rounds: Vec<Round>,
    pub round_count: u32,
    pub status: Status,
    pub final_answer: Option<String>,
    pub abort_reason: Option<String>,
    pub stage_timings: Vec<StageTiming>,
}

impl DialogueState {
    pub fn new(session_id: impl Into<String>, prompt: UserPrompt, max_rounds: u32) -> Self {
        Self {
            session_id: session_id.into(),
            prompt,
            max_rounds,
            rounds: Vec::new(),
            round_count: 0,
            status: Status::New,
            final_answer: None,
            abort_reason: None,
            stage_timings: Vec::new(),
        }
    }

    /// Questions the user still has to see, when the session is waiting on them.
    pub fn pending_questions(&self) -> Option<&ClarificationSet> {
        if self.status != Status::AwaitingUserClarification {
            return None;
        }
        self.rounds.last().and_then(|r| r.clarification.as_ref())
    }

    /// True when the latest assessment asked for clarification and no
    /// questions have been attached to it yet.
    pub fn clarification_pending(&self) -> bool {
        matches!(
            self.rounds.last(),
            Some(Round {
                assessment: ClarityAssessment {
                    route: Route::Clarify,
                    ..
                },
                clarification: None,
                ..
            })
        )
    }

    pub fn classify_count(&self) -> usize {
        self.rounds.len()
    }

    pub fn total_stage_ms(&self) -> u64 {
        self.stage_timings.iter().map(|t| t.duration_ms).sum()
    }

    /// Checks every structural invariant of the state.
    pub fn check_invariants(&self) -> Result<(), String> {
        let with_sets = self
            .rounds
            .iter()
            .filter(|r| r.clarification.is_some())
            .count() as u32;
        if with_sets != self.round_count {
            return Err(format!(
                "round_count {} != rounds with questions {}",
                self.round_count, with_sets
            ));
        }
        if self.round_count > self.max_rounds {
            return Err(format!(
                "round_count {} exceeds max_rounds {}",
                self.round_count, self.max_rounds
            ));
        }
        if self.status == Status::Answered && self.final_answer.is_none() {
            return Err("answered without final answer".into());
        }
        let mut seen = HashSet::new();
        for round in &self.rounds {
            if let Some(set) = &round.clarification {
                for q in &set.questions {
                    if !seen.insert(q.id.as_str()) {
                        return Err(format!("duplicate question id {}", q.id));
                    }
                }
                if let Some(resp) = &round.responses {
                    if resp.round_index != set.round_index {
                        return Err("responses attached to wrong round".into());
                    }
                    if let Some(k) = resp.answers.keys().find(|k| set.question(k).is_none()) {
                        return Err(format!("answer for unknown question {k}"));
                    }
                }
            } else if round.responses.is_some() {
                return Err("responses without questions".into());
            }
        }
        Ok(())
    }
}

fn illegal(state: &DialogueState, event: &PipelineEvent, detail: impl Into<String>) -> IllegalTransition {
    IllegalTransition {
        status: state.status,
        event: event.name(),
        detail: detail.into(),
    }
}

/// Advances a session by one event. Pure: the input state is not modified.
pub fn transition(state: &DialogueState, event: &PipelineEvent) -> Result<DialogueState, IllegalTransition> {
    use PipelineEvent as E;
    use Status as S;

    let mut next = state.clone();
    match (state.status, event) {
        (s, _) if s.is_terminal() => return Err(illegal(state, event, "session is finished")),

        (S::New, E::PromptSubmitted { .. }) => {
            next.status = S::AwaitingClassification;
        }

        (S::AwaitingClassification, E::Classified { assessment, duration_ms }) => {
            if state.clarification_pending() {
                return Err(illegal(state, event, "previous assessment still awaits questions"));
            }
            next.rounds.push(Round {
                assessment: *assessment,
                clarification: None,
                responses: None,
            });
            next.stage_timings.push(StageTiming {
                stage: Stage::Classify,
                duration_ms: *duration_ms,
            });
            if assessment.route == Route::Answer {
                next.status = S::Answering;
            }
        }

        (S::AwaitingClassification, E::QuestionsGenerated { set, duration_ms }) => {
            if !state.clarification_pending() {
                return Err(illegal(state, event, "no clarify assessment to attach questions to"));
            }
            if state.round_count >= state.max_rounds {
                return Err(illegal(state, event, "round threshold already reached"));
            }
            if set.round_index != state.round_count + 1 {
                return Err(illegal(
                    state,
                    event,
                    format!("expected round {}, got {}", state.round_count + 1, set.round_index),
                ));
            }
            if set.questions.is_empty() {
                return Err(illegal(state, event, "empty clarification set"));
            }
            let mut ids: HashSet<&str> = state
                .rounds
                .iter()
                .filter_map(|r| r.clarification.as_ref())
                .flat_map(|s| s.questions.iter().map(|q| q.id.as_str()))
                .collect();
            if set.questions.iter().any(|q| !ids.insert(q.id.as_str())) {
                return Err(illegal(state, event, "question id reused"));
            }
            let round = next.rounds.last_mut().expect("pending round exists");
            round.clarification = Some(set.clone());
            next.round_count += 1;
            next.stage_timings.push(StageTiming {
                stage: Stage::Clarify,
                duration_ms: *duration_ms,
            });
            next.status = S::AwaitingUserClarification;
        }

        (S::AwaitingClassification, E::ThresholdReached) => {
            if !state.clarification_pending() {
                return Err(illegal(state, event, "no unresolved clarify assessment"));
            }
            next.status = S::Answering;
        }

        (S::AwaitingUserClarification, E::UserResponded { responses }) => {
            let round = next.rounds.last_mut().expect("awaiting state has a round");
            let set = round.clarification.as_ref().expect("awaiting state has questions");
            if responses.round_index != set.round_index {
                return Err(illegal(
                    state,
                    event,
                    format!("responses for round {}, current is {}", responses.round_index, set.round_index),
                ));
            }
            if let Some(k) = responses.answers.keys().find(|k| set.question(k).is_none()) {
                return Err(illegal(state, event, format!("unknown question id {k}")));
            }
            round.responses = Some(responses.clone());
            next.status = S::AwaitingClassification;
        }

        (S::Answering, E::AnswerProduced { text, duration_ms }) => {
            next.final_answer = Some(text.clone());
            next.stage_timings.push(StageTiming {
                stage: Stage::Answer,
                duration_ms: *duration_ms,
            });
            next.status = S::Answered;
        }

        (_, E::BackendFailed { reason }) => {
            next.abort_reason = Some(reason.clone());
            next.status = S::Aborted;
        }

        _ => return Err(illegal(state, event, "event not accepted in this state")),
    }
    Ok(next)
}

/// Renders the prompt and all clarification rounds as the transcript the
/// classifier and answerer read.
///
/// Layout: the prompt text, then for each round every question as a
/// `Q: ` line followed by an `A: ` line when the user answered it.
pub fn assemble_context(state: &DialogueState) -> String {
    let mut out = state.prompt.text.clone();
    for round in &state.rounds {
        let Some(set) = &round.clarification else {
            continue;
        };
        for q in &set.questions {
            out.push_str("\nQ: ");
            out.push_str(&q.text);
            let answer = round
                .responses
                .as_ref()
                .and_then(|r| r.answers.get(&q.id))
                .filter(|a| !a.trim().is_empty());
            if let Some(a) = answer {
                out.push_str("\nA: ");
                out.push_str(a);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts() -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000, 0).unwrap()
    }

    fn fresh(max_rounds: u32) -> DialogueState {
        DialogueState::new("s1", UserPrompt::new("P", ts()).unwrap(), max_rounds)
    }

    fn assessed(level: i64) -> PipelineEvent {
        PipelineEvent::Classified {
            assessment: ClarityAssessment::new(
                ClarityLevel::new(level).unwrap(),
                ClarityThreshold::default(),
                AssessmentSource::Stub,
            ),
            duration_ms: 1,
        }
    }

    fn submitted(state: &DialogueState) -> PipelineEvent {
        PipelineEvent::PromptSubmitted {
            prompt: state.prompt.clone(),
            max_rounds: state.max_rounds,
        }
    }

    fn questions(round: u32, texts: &[&str]) -> PipelineEvent {
        PipelineEvent::QuestionsGenerated {
            set: ClarificationSet::new(texts.iter().map(|s| s.to_string()).collect(), round, 3, ts()).unwrap(),
            duration_ms: 5,
        }
    }

    fn apply(state: DialogueState, events: &[PipelineEvent]) -> DialogueState {
        events.iter().fold(state, |s, e| transition(&s, e).unwrap())
    }

    #[test]
    fn prompt_submitted_starts_classification() {
        let s = fresh(3);
        let next = transition(&s, &submitted(&s)).unwrap();
        assert_eq!(next.status, Status::AwaitingClassification);
    }

    #[test]
    fn clear_assessment_routes_to_answering() {
        let s = fresh(3);
        let s = apply(s.clone(), &[submitted(&s), assessed(4)]);
        assert_eq!(s.status, Status::Answering);
        assert_eq!(s.rounds[0].assessment.route, Route::Answer);
    }

    #[test]
    fn answered_rejects_user_response() {
        let s = fresh(3);
        let s = apply(
            s.clone(),
            &[
                submitted(&s),
                assessed(4),
                PipelineEvent::AnswerProduced {
                    text: "done".into(),
                    duration_ms: 2,
                },
            ],
        );
        assert_eq!(s.status, Status::Answered);
        let err = transition(
            &s,
            &PipelineEvent::UserResponded {
                responses: ClarificationResponses::new(1),
            },
        )
        .unwrap_err();
        assert_eq!(err.status, Status::Answered);
    }

    #[test]
    fn clarify_round_then_answer() {
        let s = fresh(3);
        let s = apply(
            s.clone(),
            &[
                submitted(&s),
                assessed(1),
                questions(1, &["Q1", "Q2"]),
            ],
        );
        assert_eq!(s.status, Status::AwaitingUserClarification);
        assert_eq!(s.round_count, 1);
        let s = apply(
            s,
            &[
                PipelineEvent::UserResponded {
                    responses: ClarificationResponses::new(1).with_answer("r1q1", "A1"),
                },
                assessed(4),
            ],
        );
        assert_eq!(s.status, Status::Answering);
        assert!(s.check_invariants().is_ok());
    }

    #[test]
    fn questions_beyond_max_rounds_rejected() {
        let s = fresh(1);
        let s = apply(
            s.clone(),
            &[
                submitted(&s),
                assessed(1),
                questions(1, &["Q1"]),
                PipelineEvent::UserResponded {
                    responses: ClarificationResponses::new(1),
                },
                assessed(1),
            ],
        );
        assert!(transition(&s, &questions(2, &["Q"])).is_err());
        let s = transition(&s, &PipelineEvent::ThresholdReached).unwrap();
        assert_eq!(s.status, Status::Answering);
    }

    #[test]
    fn unknown_question_id_rejected() {
        let s = fresh(3);
        let s = apply(s.clone(), &[submitted(&s), assessed(1), questions(1, &["Q1"])]);
        let err = transition(
            &s,
            &PipelineEvent::UserResponded {
                responses: ClarificationResponses::new(1).with_answer("r1q9", "x"),
            },
        );
        assert!(err.is_err());
    }

    #[test]
    fn backend_failure_aborts_from_any_live_state() {
        let s = fresh(3);
        let failed = PipelineEvent::BackendFailed { reason: "down".into() };
        assert_eq!(transition(&s, &failed).unwrap().status, Status::Aborted);
        let s = apply(s.clone(), &[submitted(&s), assessed(1), questions(1, &["Q1"])]);
        let aborted = transition(&s, &failed).unwrap();
        assert_eq!(aborted.status, Status::Aborted);
        assert!(transition(&aborted, &failed).is_err());
    }

    #[test]
    fn context_of_empty_session_is_prompt() {
        assert_eq!(assemble_context(&fresh(3)), "P");
    }

    #[test]
    fn context_lists_partial_answers() {
        let s = fresh(3);
        let s = apply(
            s.clone(),
            &[
                submitted(&s),
                assessed(1),
                questions(1, &["Q1", "Q2"]),
                PipelineEvent::UserResponded {
                    responses: ClarificationResponses::new(1).with_answer("r1q1", "A1"),
                },
            ],
        );
        assert_eq!(assemble_context(&s), "P\nQ: Q1\nA: A1\nQ: Q2");
        assert_eq!(assemble_context(&s), assemble_context(&s.clone()));
    }

    #[test]
    fn level_bounds() {
        assert!(ClarityLevel::new(0).is_err());
        assert!(ClarityLevel::new(5).is_err());
        assert!(ClarityThreshold::new(1).is_err());
        let t = ClarityThreshold::new(3).unwrap();
        assert_eq!(t.route(ClarityLevel::new(2).unwrap()), Route::Clarify);
        assert_eq!(t.route(ClarityLevel::new(3).unwrap()), Route::Answer);
    }

    #[test]
    fn blank_prompt_rejected() {
        assert_eq!(UserPrompt::new("  \n", ts()), Err(DomainError::EmptyPrompt));
        assert!(UserPrompt::new("function f() {\n  // TODO\n}", ts()).unwrap().contains_code);
        assert!(!UserPrompt::new("help me with my database", ts()).unwrap().contains_code);
    }
}
