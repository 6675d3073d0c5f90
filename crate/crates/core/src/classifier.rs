//! Clarity scoring and routing, plus quality metrics for labelled datasets.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::domain::{is_code_line, AssessmentSource, ClarityAssessment, ClarityLevel, ClarityThreshold};
use crate::template::{PromptTemplate, TemplateError};

/// Level assumed when a model reply never yields a parseable level.
pub const UNPARSEABLE_FALLBACK_LEVEL: u8 = 2;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("context is empty")]
    EmptyContext,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Levels replayed in order; the last one repeats once the script runs out.
#[derive(Debug)]
pub struct ScriptedLevels {
    levels: Vec<ClarityLevel>,
    cursor: Mutex<usize>,
}

impl ScriptedLevels {
    pub fn new(levels: Vec<ClarityLevel>) -> Self {
        assert!(!levels.is_empty(), "scripted levels must not be empty");
        Self {
            levels,
            cursor: Mutex::new(0),
        }
    }

    pub fn from_ints(levels: &[i64]) -> Result<Self, crate::domain::DomainError> {
        let levels = levels.iter().map(|l| ClarityLevel::new(*l)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(levels))
    }

    fn next(&self) -> ClarityLevel {
        let mut cursor = self.cursor.lock().expect("script lock");
        let level = self.levels[(*cursor).min(self.levels.len() - 1)];
        *cursor += 1;
        level
    }
}

pub enum ClassifierKind {
    RemoteModel {
        backend: Arc<dyn ChatBackend>,
        template: PromptTemplate,
    },
    Heuristic,
    Stub(ScriptedLevels),
}

pub struct ClassifierBinding {
    pub kind: ClassifierKind,
    pub threshold: ClarityThreshold,
}

impl ClassifierBinding {
    pub fn remote(
        backend: Arc<dyn ChatBackend>,
        template: PromptTemplate,
        threshold: ClarityThreshold,
    ) -> Result<Self, TemplateError> {
        Ok(Self {
            kind: ClassifierKind::RemoteModel {
                backend,
                template: template.require_once("context")?,
            },
            threshold,
        })
    }

    pub fn heuristic(threshold: ClarityThreshold) -> Self {
        Self {
            kind: ClassifierKind::Heuristic,
            threshold,
        }
    }

    pub fn stub(levels: ScriptedLevels, threshold: ClarityThreshold) -> Self {
        Self {
            kind: ClassifierKind::Stub(levels),
            threshold,
        }
    }

    pub fn classify(&self, context: &str) -> Result<ClarityAssessment, ClassifyError> {
        if context.trim().is_empty() {
            return Err(ClassifyError::EmptyContext);
        }
        let (level, source) = match &self.kind {
            ClassifierKind::Stub(script) => (script.next(), AssessmentSource::Stub),
            ClassifierKind::Heuristic => (heuristic_level(context), AssessmentSource::Heuristic),
            ClassifierKind::RemoteModel { backend, template } => {
                (remote_level(backend.as_ref(), template, context)?, AssessmentSource::ModelBackend)
            }
        };
        Ok(ClarityAssessment::new(level, self.threshold, source))
    }
}

fn remote_level(backend: &dyn ChatBackend, template: &PromptTemplate, context: &str) -> Result<ClarityLevel, BackendError> {
    let request = ChatRequest::user(template.render(&[("context", context)]));
    for attempt in 0..2 {
        let reply = backend.complete(&request)?;
        if let Some(level) = parse_level(&reply.text) {
            return Ok(level);
        }
        warn!(attempt, reply = %reply.text, "classifier reply has no level 1-4");
    }
    Ok(ClarityLevel::new(UNPARSEABLE_FALLBACK_LEVEL as i64).expect("fallback level is valid"))
}

/// First standalone digit 1-4 in a model reply.
pub fn parse_level(reply: &str) -> Option<ClarityLevel> {
    let chars: Vec<char> = reply.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        if !('1'..='4').contains(c) {
            continue;
        }
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        let joined_before = before.is_some_and(|b| b.is_ascii_digit() || b == '.');
        let joined_after = after.is_some_and(|a| a.is_ascii_digit())
            || (after == Some('.') && chars.get(i + 2).is_some_and(|n| n.is_ascii_digit()));
        if !joined_before && !joined_after {
            return ClarityLevel::new(c.to_digit(10).unwrap() as i64).ok();
        }
    }
    None
}

/// Measurable signals behind the heuristic score.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeuristicFeatures {
    pub prose_words: usize,
    pub has_code: bool,
    pub has_goal: bool,
    pub has_detail: bool,
    pub vague_markers: usize,
    pub question_marks: usize,
    pub answered_clarifications: usize,
}

const GOAL_WORDS: [&str; 24] = [
    "write", "implement", "create", "add", "fix", "refactor", "optimize", "optimise", "convert", "build", "generate",
    "rewrite", "explain", "review", "debug", "parse", "return", "make", "test", "port", "translate", "complete",
    "finish", "remove",
];

const DETAIL_WORDS: [&str; 16] = [
    "using", "with", "should", "must", "returns", "return", "input", "output", "format", "json", "expect", "raise",
    "throw", "error", "handle", "when",
];

const VAGUE_PHRASES: [&str; 8] = [
    "something", "stuff", "doesn't work", "not working", "help me", "need help", "somehow", "whatever",
];

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

pub fn heuristic_features(context: &str) -> HeuristicFeatures {
    let mut f = HeuristicFeatures::default();
    let mut prose = String::new();
    let mut in_fence = false;
    for line in context.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("```") {
            in_fence = !in_fence;
            f.has_code = true;
            continue;
        }
        if in_fence || is_code_line(line) {
            f.has_code = true;
            continue;
        }
        if trimmed.starts_with("Q: ") {
            continue;
        }
        if let Some(answer) = trimmed.strip_prefix("A: ") {
            f.answered_clarifications += 1;
            prose.push_str(answer);
            prose.push('\n');
            continue;
        }
        prose.push_str(trimmed);
        prose.push('\n');
    }
    let lower = prose.to_lowercase();
    let tokens: Vec<String> = words(&prose).collect();
    f.prose_words = tokens.len();
    f.has_goal = tokens.iter().any(|w| GOAL_WORDS.contains(&w.as_str()));
    f.has_detail = tokens.iter().any(|w| DETAIL_WORDS.contains(&w.as_str()));
    f.vague_markers = VAGUE_PHRASES.iter().filter(|p| lower.contains(*p)).count();
    f.question_marks = prose.matches('?').count();
    f
}

/// Offline fallback scorer. Code without any prose instruction stays at the
/// bottom of the scale.
pub fn heuristic_level(context: &str) -> ClarityLevel {
    let f = heuristic_features(context);
    let mut score: i64 = 1;
    if f.has_goal {
        score += 1;
    }
    if f.prose_words >= 8 {
        score += 1;
    }
    if f.has_detail {
        score += 1;
    }
    score += f.answered_clarifications.min(2) as i64;
    score -= f.vague_markers.min(2) as i64;
    if f.question_marks > 0 && f.prose_words < 6 {
        score -= 1;
    }
    ClarityLevel::new(score.clamp(1, 4)).expect("clamped")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("no labels to evaluate")]
    Empty,
}

/// Binary confusion counts with "clear" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryConfusion {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl BinaryConfusion {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn trace(&self) -> u64 {
        self.true_positive + self.true_negative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Exact-level agreement on the 4-point scale.
    pub level_accuracy: f64,
    /// `levels[gold - 1][predicted - 1]`.
    pub levels: [[u64; 4]; 4],
    pub binary: BinaryConfusion,
    pub clear_min_level: u8,
}

/// Ratio where an empty denominator counts as perfect: nothing was claimed
/// (precision) or nothing was there to find (recall).
fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate_classifier(
    predictions: &[ClarityLevel],
    gold: &[ClarityLevel],
    threshold: ClarityThreshold,
) -> Result<ClassifierMetrics, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut levels = [[0u64; 4]; 4];
    let mut binary = BinaryConfusion::default();
    for (p, g) in predictions.iter().zip(gold) {
        levels[g.get() as usize - 1][p.get() as usize - 1] += 1;
        match (threshold.is_clear(*g), threshold.is_clear(*p)) {
            (true, true) => binary.true_positive += 1,
            (false, true) => binary.false_positive += 1,
            (true, false) => binary.false_negative += 1,
            (false, false) => binary.true_negative += 1,
        }
    }
    let diagonal: u64 = (0..4).map(|i| levels[i][i]).sum();
    Ok(ClassifierMetrics {
        accuracy: binary.trace() as f64 / binary.total() as f64,
        precision: ratio_or_one(binary.true_positive, binary.true_positive + binary.false_positive),
        recall: ratio_or_one(binary.true_positive, binary.true_positive + binary.false_negative),
        level_accuracy: diagonal as f64 / gold.len() as f64,
        levels,
        binary,
        clear_min_level: threshold.clear_min_level(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendClient, BackendConfig, ManualClock, StubReply, StubTransport};
    use crate::domain::Route;

    const MOTIVATING: &str = "async function getUserData(userId) {\n  // TODO: fetch user data\n}\n";

    fn lv(v: &[i64]) -> Vec<ClarityLevel> {
        v.iter().map(|l| ClarityLevel::new(*l).unwrap()).collect()
    }

    fn remote(stub: StubTransport) -> ClassifierBinding {
        let client = BackendClient::new(BackendConfig::new("http://stub", "clf"), Arc::new(stub), Arc::new(ManualClock::new())).unwrap();
        ClassifierBinding::remote(
            Arc::new(client),
            PromptTemplate::new(crate::template::defaults::CLASSIFIER),
            ClarityThreshold::default(),
        )
        .unwrap()
    }

    #[test]
    fn stub_levels_route() {
        let b = ClassifierBinding::stub(ScriptedLevels::from_ints(&[4, 1]).unwrap(), ClarityThreshold::default());
        let a = b.classify("x").unwrap();
        assert_eq!((a.level.get(), a.route), (4, Route::Answer));
        let a = b.classify("x").unwrap();
        assert_eq!((a.level.get(), a.route), (1, Route::Clarify));
        assert_eq!(b.classify("x").unwrap().level.get(), 1);
    }

    #[test]
    fn empty_context_rejected() {
        let b = ClassifierBinding::heuristic(ClarityThreshold::default());
        assert!(matches!(b.classify("  "), Err(ClassifyError::EmptyContext)));
    }

    #[test]
    fn heuristic_flags_bare_code_with_todo() {
        let b = ClassifierBinding::heuristic(ClarityThreshold::default());
        let a = b.classify(MOTIVATING).unwrap();
        assert_eq!(a.route, Route::Clarify);
        assert_eq!(a.source, AssessmentSource::Heuristic);
    }

    #[test]
    fn heuristic_accepts_specific_request() {
        let b = ClassifierBinding::heuristic(ClarityThreshold::default());
        let a = b
            .classify("Write a Python function that parses ISO-8601 dates and returns a datetime, raising ValueError on bad input.")
            .unwrap();
        assert_eq!(a.route, Route::Answer);
        let vague = b
            .classify("I need help connecting to a database. My code keeps throwing errors.")
            .unwrap();
        assert_eq!(vague.route, Route::Clarify);
    }

    #[test]
    fn heuristic_credits_answers() {
        let bare = heuristic_level(MOTIVATING);
        let answered = heuristic_level(&format!(
            "{MOTIVATING}Q: What should the function return?\nA: The user JSON from the REST endpoint\nQ: What should happen if the API call fails?"
        ));
        assert!(answered > bare);
    }

    #[test]
    fn parses_levels_from_replies() {
        assert_eq!(parse_level("3").map(|l| l.get()), Some(3));
        assert_eq!(parse_level("Level: 4.").map(|l| l.get()), Some(4));
        assert_eq!(parse_level("I would say 2"), ClarityLevel::new(2).ok());
        assert_eq!(parse_level("10 or 5"), None);
        assert_eq!(parse_level("2.5"), None);
        assert_eq!(parse_level("unclear"), None);
    }

    #[test]
    fn remote_retries_once_then_falls_back() {
        let stub = StubTransport::scripted(vec![StubReply::text("hmm"), StubReply::text("3")]);
        let calls = stub.call_counter();
        assert_eq!(remote(stub).classify("ctx").unwrap().level.get(), 3);
        assert_eq!(calls.get(), 2);

        let stub = StubTransport::always("no idea");
        let calls = stub.call_counter();
        let a = remote(stub).classify("ctx").unwrap();
        assert_eq!(a.level.get(), UNPARSEABLE_FALLBACK_LEVEL);
        assert_eq!(a.route, Route::Clarify);
        assert_eq!(a.source, AssessmentSource::ModelBackend);
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn remote_request_embeds_context() {
        let stub = StubTransport::from_fn(|req, _| {
            let body = req.last_user_content().unwrap();
            StubReply::text(if body.contains("MARKER") { "4" } else { "1" })
        });
        assert_eq!(remote(stub).classify("MARKER").unwrap().level.get(), 4);
    }

    #[test]
    fn remote_propagates_exhaustion() {
        let stub = StubTransport::scripted(vec![StubReply::Fault(crate::backend::Fault::Timeout)]);
        assert!(matches!(remote(stub).classify("x"), Err(ClassifyError::Backend(BackendError::Exhausted { .. }))));
    }

    #[test]
    fn metrics_hand_computed() {
        let m = evaluate_classifier(&lv(&[1, 4, 4, 4]), &lv(&[1, 1, 4, 4]), ClarityThreshold::default()).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.levels[0], [1, 0, 0, 1]);
        assert_eq!(m.levels[3], [0, 0, 0, 2]);
    }

    #[test]
    fn metrics_perfect_and_inverted() {
        let g = lv(&[1, 2, 3, 4]);
        let m = evaluate_classifier(&g, &g, ClarityThreshold::default()).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (1.0, 1.0, 1.0));
        let m = evaluate_classifier(&lv(&[1, 1]), &lv(&[4, 4]), ClarityThreshold::default()).unwrap();
        assert_eq!((m.accuracy, m.recall), (0.0, 0.0));
    }

    #[test]
    fn metrics_length_mismatch() {
        assert_eq!(
            evaluate_classifier(&lv(&[1]), &lv(&[1, 2]), ClarityThreshold::default()),
            Err(MetricsError::LengthMismatch { predictions: 1, gold: 2 })
        );
        assert_eq!(evaluate_classifier(&[], &[], ClarityThreshold::default()), Err(MetricsError::Empty));
    }
}
