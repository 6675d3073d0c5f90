use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clarify_core::clarification::{NullSink, SessionEngine};
use clarify_core::domain::{Route, StageTiming};
use clarify_core::evalkit::{SimulatedUser, StudyItem};
use clarify_core::{assemble_context, ClarificationResponses, DialogueState, Status, UserPrompt};
use serde::{Deserialize, Serialize};
use tracing::warn;

#[derive(Debug, Clone, Deserialize)]
pub struct BatchPrompt {
    #[serde(default)]
    pub id: Option<String>,
    pub prompt: String,
    /// What the user really wants; the simulated user answers from it.
    /// Without one, every question is skipped.
    #[serde(default)]
    pub intent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub level: u8,
    pub route: Route,
    pub questions: Vec<String>,
    pub answers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub prompt: String,
    pub intent: Option<String>,
    pub status: Status,
    pub round_count: u32,
    pub rounds: Vec<RoundRecord>,
    pub transcript: String,
    pub final_answer: Option<String>,
    pub abort_reason: Option<String>,
    pub stage_timings: Vec<StageTiming>,
    pub total_stage_ms: u64,
    /// Set when the simulated user itself failed mid-session.
    pub error: Option<String>,
}

impl BatchRecord {
    fn new(id: String, input: &BatchPrompt, state: &DialogueState, error: Option<String>) -> Self {
        let rounds = state
            .rounds
            .iter()
            .map(|r| {
                let set = r.clarification.as_ref();
                RoundRecord {
                    level: r.assessment.level.get(),
                    route: r.assessment.route,
                    questions: set.map(|s| s.questions.iter().map(|q| q.text.clone()).collect()).unwrap_or_default(),
                    answers: r.responses.as_ref().map(|x| x.answers.clone()).unwrap_or_default(),
                }
            })
            .collect();
        Self {
            id,
            prompt: input.prompt.clone(),
            intent: input.intent.clone(),
            status: state.status,
            round_count: state.round_count,
            rounds,
            transcript: assemble_context(state),
            final_answer: state.final_answer.clone(),
            abort_reason: state.abort_reason.clone(),
            stage_timings: state.stage_timings.clone(),
            total_stage_ms: state.total_stage_ms(),
            error,
        }
    }
}

pub fn read_prompts(path: &Path) -> Result<Vec<BatchPrompt>> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: BatchPrompt =
            serde_json::from_str(line).with_context(|| format!("{}:{}: bad prompt record", path.display(), i + 1))?;
        out.push(p);
    }
    Ok(out)
}

/// Runs one prompt to completion with the simulated user answering.
pub fn run_one(engine: &SessionEngine, user: Option<&SimulatedUser>, id: String, input: &BatchPrompt) -> BatchRecord {
    let Ok(prompt) = UserPrompt::now(input.prompt.clone()) else {
        let empty = DialogueState::new(id.clone(), UserPrompt::now("-").expect("non-empty"), engine.max_rounds);
        let mut rec = BatchRecord::new(id, input, &empty, Some("prompt is empty".into()));
        rec.transcript.clear();
        return rec;
    };
    let mut state = match engine.start(id.clone(), prompt, &mut NullSink) {
        Ok(s) => s,
        Err(e) => {
            let fresh = DialogueState::new(id.clone(), UserPrompt::now(input.prompt.clone()).expect("checked"), 0);
            return BatchRecord::new(id, input, &fresh, Some(e.to_string()));
        }
    };
    let mut error = None;
    while let Some(set) = state.pending_questions().cloned() {
        let responses = match (user, &input.intent) {
            (Some(user), Some(intent)) => match user.respond(&input.prompt, intent, &set) {
                Ok(r) => r,
                Err(e) => {
                    warn!(id = %id, "simulated user failed: {e}");
                    error = Some(format!("simulated user: {e}"));
                    break;
                }
            },
            _ => ClarificationResponses::new(set.round_index),
        };
        match engine.respond(state.clone(), responses, &mut NullSink) {
            Ok(next) => state = next,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    BatchRecord::new(id, input, &state, error)
}

pub fn run_batch(engine: &SessionEngine, user: Option<&SimulatedUser>, prompts: &[BatchPrompt]) -> Vec<BatchRecord> {
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| run_one(engine, user, p.id.clone().unwrap_or_else(|| format!("prompt-{:04}", i + 1)), p))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Pairs each clarified answer with the baseline answer to the bare prompt,
/// ready for a blinded study. Records without a final answer are skipped.
pub fn study_items(engine: &SessionEngine, records: &[BatchRecord]) -> Result<Vec<StudyItem>> {
    let mut items = Vec::new();
    for r in records {
        let Some(ours) = &r.final_answer else {
            warn!(id = %r.id, status = %r.status, "no final answer, left out of the study");
            continue;
        };
        let baseline = match engine.answerer.answer_baseline(&r.prompt) {
            Ok(b) => b,
            Err(e) => bail!("baseline answer for {}: {e}", r.id),
        };
        items.push(StudyItem {
            item_id: r.id.clone(),
            prompt: r.prompt.clone(),
            ours: ours.clone(),
            baseline,
        });
    }
    Ok(items)
}
