//! Synthetic training data from a teacher model.
//!
//! A campaign issues `n` indexed teacher requests. Each reply must be a single
//! JSON object; anything else is counted as a parse failure, and requests that
//! exhaust their retries are counted as timeouts. Neither aborts the run.
//!
//! Dataset files are JSON lines: a schema header followed by one record per
//! attempted index, either an example or a failure marker. Rerunning a
//! campaign against an existing file only issues the missing indices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::backend::{BackendError, ChatBackend, ChatRequest, Fault, StubReply, StubTransport};
use crate::template::{PromptTemplate, TemplateError};

pub const SCHEMA_VERSION: u32 = 1;
pub const CLASSIFIER_SCHEMA: &str = "classifier-examples";
pub const CLARIFICATION_SCHEMA: &str = "clarification-examples";

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("n must be > 0")]
    ZeroCount,
    #[error("invalid category mix: {0}")]
    InvalidMix(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("teacher misconfigured: {0}")]
    Backend(BackendError),
    #[error("existing output {path}: {message}")]
    ExistingOutput { path: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierExample {
    pub prompt: String,
    pub clarity_label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClarificationCategory {
    CodeOnlyUnderspecified,
    NaturalLanguageCodeRelated,
}

impl fmt::Display for ClarificationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClarificationCategory::CodeOnlyUnderspecified => "code_only_underspecified",
            ClarificationCategory::NaturalLanguageCodeRelated => "natural_language_code_related",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationExample {
    pub prompt: String,
    pub questions: Vec<String>,
    pub category: ClarificationCategory,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationCampaignReport {
    pub attempted: u64,
    pub parsed: u64,
    pub failed_parse: u64,
    pub failed_timeout: u64,
}

impl GenerationCampaignReport {
    pub fn parse_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.parsed as f64 / self.attempted as f64
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.attempted == self.parsed + self.failed_parse + self.failed_timeout
    }

    fn count(&mut self, outcome: &Outcome<impl Sized>) {
        self.attempted += 1;
        match outcome {
            Outcome::Parsed(_) => self.parsed += 1,
            Outcome::Failed(FailureReason::Parse) => self.failed_parse += 1,
            Outcome::Failed(FailureReason::Timeout) => self.failed_timeout += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Parse,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record<T> {
    Example {
        index: u64,
        #[serde(flatten)]
        example: T,
    },
    Failure {
        index: u64,
        reason: FailureReason,
    },
}

impl<T> Record<T> {
    fn index(&self) -> u64 {
        match self {
            Record::Example { index, .. } | Record::Failure { index, .. } => *index,
        }
    }
}

enum Outcome<T> {
    Parsed(T),
    Failed(FailureReason),
}

/// Share of each clarification category in a campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryMix {
    pub code_only: f64,
    pub natural_language: f64,
}

impl Default for CategoryMix {
    fn default() -> Self {
        Self {
            code_only: 0.5,
            natural_language: 0.5,
        }
    }
}

impl CategoryMix {
    pub fn new(code_only: f64, natural_language: f64) -> Result<Self, DatagenError> {
        if !(code_only >= 0.0 && natural_language >= 0.0) || ((code_only + natural_language) - 1.0).abs() > 1e-9 {
            return Err(DatagenError::InvalidMix(format!(
                "{code_only} + {natural_language} must sum to 1"
            )));
        }
        Ok(Self {
            code_only,
            natural_language,
        })
    }

    /// Largest-remainder assignment: after any prefix of `k` indices the
    /// code-only count is `floor(k * code_only)`.
    pub fn category_for(&self, index: u64) -> ClarificationCategory {
        const EPS: f64 = 1e-9;
        let before = (index as f64 * self.code_only + EPS).floor();
        let after = ((index + 1) as f64 * self.code_only + EPS).floor();
        if after > before {
            ClarificationCategory::CodeOnlyUnderspecified
        } else {
            ClarificationCategory::NaturalLanguageCodeRelated
        }
    }
}

impl FromStr for CategoryMix {
    type Err = DatagenError;

    /// Accepts `"50/50"` style ratios or a single code-only fraction.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatagenError::InvalidMix(s.to_string());
        match s.split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| bad())?;
                let b: f64 = b.trim().parse().map_err(|_| bad())?;
                if a + b <= 0.0 {
                    return Err(bad());
                }
                Self::new(a / (a + b), b / (a + b))
            }
            None => {
                let a: f64 = s.trim().parse().map_err(|_| bad())?;
                Self::new(a, 1.0 - a)
            }
        }
    }
}

#[derive(Deserialize)]
struct ClassifierReply {
    prompt: String,
    label: i64,
}

#[derive(Deserialize)]
struct ClarificationReply {
    prompt: String,
    questions: Vec<String>,
}

pub fn parse_classifier_reply(reply: &str) -> Option<ClassifierExample> {
    let parsed: ClassifierReply = serde_json::from_str(reply.trim()).ok()?;
    if parsed.prompt.trim().is_empty() || !(1..=4).contains(&parsed.label) {
        return None;
    }
    Some(ClassifierExample {
        prompt: parsed.prompt,
        clarity_label: parsed.label as u8,
    })
}

pub fn parse_clarification_reply(reply: &str, category: ClarificationCategory) -> Option<ClarificationExample> {
    let parsed: ClarificationReply = serde_json::from_str(reply.trim()).ok()?;
    if parsed.prompt.trim().is_empty()
        || parsed.questions.is_empty()
        || parsed.questions.iter().any(|q| q.trim().is_empty())
    {
        return None;
    }
    Some(ClarificationExample {
        prompt: parsed.prompt,
        questions: parsed.questions,
        category,
    })
}

/// Teacher plus campaign knobs.
pub struct Campaign<'a> {
    pub teacher: &'a dyn ChatBackend,
    /// Concurrent teacher requests per batch.
    pub width: usize,
    pub temperature: f64,
}

impl<'a> Campaign<'a> {
    pub fn new(teacher: &'a dyn ChatBackend) -> Self {
        Self {
            teacher,
            width: 1,
            temperature: 1.0,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width.max(1);
        self
    }

    fn attempt<T>(
        &self,
        index: u64,
        prompt: String,
        parse: &(dyn Fn(u64, &str) -> Option<T> + Sync),
    ) -> Result<Outcome<T>, DatagenError> {
        let request = ChatRequest::user(prompt).with_key(index).with_temperature(self.temperature);
        match self.teacher.complete(&request) {
            Ok(reply) => Ok(match parse(index, &reply.text) {
                Some(example) => Outcome::Parsed(example),
                None => Outcome::Failed(FailureReason::Parse),
            }),
            Err(BackendError::InvalidResponse(_)) => Ok(Outcome::Failed(FailureReason::Parse)),
            Err(BackendError::Exhausted { .. } | BackendError::Rejected { .. }) => {
                Ok(Outcome::Failed(FailureReason::Timeout))
            }
            Err(e @ (BackendError::InvalidConfig(_) | BackendError::InvalidRequest(_))) => Err(DatagenError::Backend(e)),
        }
    }

    fn run<T>(
        &self,
        n: u64,
        schema: &str,
        out: Option<&Path>,
        render: &(dyn Fn(u64) -> String + Sync),
        parse: &(dyn Fn(u64, &str) -> Option<T> + Sync),
    ) -> Result<(Vec<T>, GenerationCampaignReport), DatagenError>
    where
        T: Serialize + DeserializeOwned + Send + Clone,
    {
        if n == 0 {
            return Err(DatagenError::ZeroCount);
        }
        let mut records: BTreeMap<u64, Record<T>> = BTreeMap::new();
        let mut writer = match out {
            Some(path) => {
                let (existing, file) = open_for_resume::<T>(path, schema)?;
                for rec in existing {
                    records.insert(rec.index(), rec);
                }
                Some(BufWriter::new(file))
            }
            None => None,
        };
        if !records.is_empty() {
            info!(existing = records.len(), n, "resuming campaign");
        }
        let pending: Vec<u64> = (0..n).filter(|i| !records.contains_key(i)).collect();
        for batch in pending.chunks(self.width) {
            let outcomes: Vec<Result<Outcome<T>, DatagenError>> = if batch.len() == 1 {
                vec![self.attempt(batch[0], render(batch[0]), parse)]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = batch
                        .iter()
                        .map(|&i| scope.spawn(move || self.attempt(i, render(i), parse)))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("teacher worker panicked")).collect()
                })
            };
            for (&index, outcome) in batch.iter().zip(outcomes) {
                let record = match outcome? {
                    Outcome::Parsed(example) => Record::Example { index, example },
                    Outcome::Failed(reason) => Record::Failure { index, reason },
                };
                if let Some(w) = writer.as_mut() {
                    serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::from)?;
                    w.write_all(b"\n")?;
                }
                records.insert(index, record);
            }
            if let Some(w) = writer.as_mut() {
                w.flush()?;
                w.get_ref().sync_data()?;
            }
        }
        let mut report = GenerationCampaignReport::default();
        let mut examples = Vec::new();
        for (_, rec) in records.range(..n) {
            match rec {
                Record::Example { example, .. } => {
                    report.count(&Outcome::Parsed(()));
                    examples.push(example.clone());
                }
                Record::Failure { reason, .. } => report.count(&Outcome::<()>::Failed(*reason)),
            }
        }
        debug_assert!(report.is_consistent());
        Ok((examples, report))
    }

    /// Generates prompt/clarity-label pairs.
    pub fn generate_classifier_dataset(
        &self,
        template: &PromptTemplate,
        n: u64,
        out: Option<&Path>,
    ) -> Result<(Vec<ClassifierExample>, GenerationCampaignReport), DatagenError> {
        let template = template.clone().require_once("index")?;
        let render = |i: u64| template.render(&[("index", &i.to_string())]);
        let parse = |_: u64, reply: &str| parse_classifier_reply(reply);
        self.run(n, CLASSIFIER_SCHEMA, out, &render, &parse)
    }

    /// Generates prompt/questions pairs, assigning each index a category from
    /// `mix` before the request is made.
    pub fn generate_clarification_dataset(
        &self,
        code_only_template: &PromptTemplate,
        natural_language_template: &PromptTemplate,
        n: u64,
        mix: CategoryMix,
        out: Option<&Path>,
    ) -> Result<(Vec<ClarificationExample>, GenerationCampaignReport), DatagenError> {
        let code = code_only_template.clone().require_once("index")?;
        let prose = natural_language_template.clone().require_once("index")?;
        let render = |i: u64| {
            let t = match mix.category_for(i) {
                ClarificationCategory::CodeOnlyUnderspecified => &code,
                ClarificationCategory::NaturalLanguageCodeRelated => &prose,
            };
            t.render(&[("index", &i.to_string()), ("category", &mix.category_for(i).to_string())])
        };
        let parse = |i: u64, reply: &str| parse_clarification_reply(reply, mix.category_for(i));
        self.run(n, CLARIFICATION_SCHEMA, out, &render, &parse)
    }
}

fn open_for_resume<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<(Vec<Record<T>>, File), DatagenError> {
    let existing_err = |message: String| DatagenError::ExistingOutput {
        path: path.display().to_string(),
        message,
    };
    if !path.exists() || fs::metadata(path)?.len() == 0 {
        let mut file = File::create(path)?;
        let header = serde_json::to_string(&Header {
            schema: schema.to_string(),
            version: SCHEMA_VERSION,
        })
        .expect("header serializes");
        writeln!(file, "{header}")?;
        return Ok((Vec::new(), file));
    }
    let raw = fs::read_to_string(path)?;
    let mut lines = raw.split_inclusive('\n');
    let header_line = lines.next().unwrap_or_default();
    let header: Header = serde_json::from_str(header_line.trim()).map_err(|e| existing_err(format!("header: {e}")))?;
    if header.schema != schema || header.version != SCHEMA_VERSION {
        return Err(existing_err(format!(
            "schema {} v{} does not match {schema} v{SCHEMA_VERSION}",
            header.schema, header.version
        )));
    }
    let mut records = Vec::new();
    let mut valid_len = header_line.len();
    for (i, line) in lines.enumerate() {
        if !line.ends_with('\n') {
            break;
        }
        let rec: Record<T> =
            serde_json::from_str(line.trim()).map_err(|e| existing_err(format!("line {}: {e}", i + 2)))?;
        records.push(rec);
        valid_len += line.len();
    }
    let file = OpenOptions::new().write(true).open(path)?;
    // Drop a torn final line before appending.
    file.set_len(valid_len as u64)?;
    drop(file);
    let file = OpenOptions::new().append(true).open(path)?;
    Ok((records, file))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub schema: Option<String>,
    pub examples: usize,
    pub failures: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_classifier(v: &serde_json::Value) -> Result<(), String> {
    let ex: ClassifierExample = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
    if ex.prompt.trim().is_empty() {
        return Err("prompt is empty".into());
    }
    if !(1..=4).contains(&ex.clarity_label) {
        return Err(format!("clarity_label {} outside 1..=4", ex.clarity_label));
    }
    Ok(())
}

fn check_clarification(v: &serde_json::Value) -> Result<(), String> {
    let ex: ClarificationExample = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
    if ex.prompt.trim().is_empty() {
        return Err("prompt is empty".into());
    }
    if ex.questions.is_empty() {
        return Err("questions list is empty".into());
    }
    if ex.questions.iter().any(|q| q.trim().is_empty()) {
        return Err("blank question".into());
    }
    Ok(())
}

/// Checks every line of a dataset file against its declared schema.
pub fn validate_dataset(path: &Path) -> Result<ValidationReport, std::io::Error> {
    let raw = fs::read_to_string(path)?;
    let mut report = ValidationReport {
        schema: None,
        examples: 0,
        failures: 0,
        violations: Vec::new(),
    };
    let mut lines = raw.lines().enumerate();
    let check: fn(&serde_json::Value) -> Result<(), String> = match lines.next() {
        Some((_, first)) => match serde_json::from_str::<Header>(first) {
            Ok(h) if h.version != SCHEMA_VERSION => {
                report.violations.push(Violation {
                    line: 1,
                    message: format!("unsupported schema version {}", h.version),
                });
                return Ok(report);
            }
            Ok(h) if h.schema == CLASSIFIER_SCHEMA => {
                report.schema = Some(h.schema);
                check_classifier
            }
            Ok(h) if h.schema == CLARIFICATION_SCHEMA => {
                report.schema = Some(h.schema);
                check_clarification
            }
            Ok(h) => {
                report.violations.push(Violation {
                    line: 1,
                    message: format!("unknown schema {:?}", h.schema),
                });
                return Ok(report);
            }
            Err(e) => {
                report.violations.push(Violation {
                    line: 1,
                    message: format!("missing or invalid header: {e}"),
                });
                return Ok(report);
            }
        },
        None => {
            report.violations.push(Violation {
                line: 1,
                message: "file is empty".into(),
            });
            return Ok(report);
        }
    };
    let mut seen = BTreeSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let mut fail = |message: String| report.violations.push(Violation { line: line_no, message });
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                fail(format!("invalid JSON: {e}"));
                continue;
            }
        };
        let Some(index) = value.get("index").and_then(|v| v.as_u64()) else {
            fail("missing index".into());
            continue;
        };
        if !seen.insert(index) {
            fail(format!("duplicate index {index}"));
        }
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("example") => match check(&value) {
                Ok(()) => report.examples += 1,
                Err(m) => fail(m),
            },
            Some("failure") => match value.get("reason").and_then(|r| r.as_str()) {
                Some("parse" | "timeout") => report.failures += 1,
                _ => fail("failure record without a known reason".into()),
            },
            other => fail(format!("unknown record kind {other:?}")),
        }
    }
    Ok(report)
}

/// Loads the examples of a dataset file, skipping failure markers.
pub fn read_dataset<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>, DatagenError> {
    let raw = fs::read_to_string(path)?;
    let err = |message: String| DatagenError::ExistingOutput {
        path: path.display().to_string(),
        message,
    };
    let mut lines = raw.lines();
    let header: Header = serde_json::from_str(lines.next().unwrap_or_default()).map_err(|e| err(format!("header: {e}")))?;
    if header.schema != schema {
        return Err(err(format!("expected schema {schema}, found {}", header.schema)));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record<T>>(line).map_err(|e| err(format!("line {}: {e}", i + 2)))? {
            Record::Example { example, .. } => out.push(example),
            Record::Failure { .. } => {}
        }
    }
    Ok(out)
}

/// Peeks at the schema named in a dataset header.
pub fn dataset_schema(path: &Path) -> Result<String, DatagenError> {
    let raw = fs::read_to_string(path)?;
    let header: Header =
        serde_json::from_str(raw.lines().next().unwrap_or_default()).map_err(|e| DatagenError::ExistingOutput {
            path: path.display().to_string(),
            message: format!("header: {e}"),
        })?;
    Ok(header.schema)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub messages: Vec<FinetuneMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ClarificationCategory>,
}

pub fn numbered(questions: &[String]) -> String {
    questions
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

impl From<&ClarificationExample> for FinetuneRecord {
    fn from(ex: &ClarificationExample) -> Self {
        FinetuneRecord {
            messages: vec![
                FinetuneMessage {
                    role: "user".into(),
                    content: ex.prompt.clone(),
                },
                FinetuneMessage {
                    role: "assistant".into(),
                    content: numbered(&ex.questions),
                },
            ],
            category: Some(ex.category),
        }
    }
}

impl From<&ClassifierExample> for FinetuneRecord {
    fn from(ex: &ClassifierExample) -> Self {
        FinetuneRecord {
            messages: vec![
                FinetuneMessage {
                    role: "user".into(),
                    content: ex.prompt.clone(),
                },
                FinetuneMessage {
                    role: "assistant".into(),
                    content: ex.clarity_label.to_string(),
                },
            ],
            category: None,
        }
    }
}

/// Writes chat-format records (user = prompt, assistant = target) as JSON lines.
pub fn export_finetune_format<'a, T>(examples: &'a [T], out: &Path) -> Result<usize, std::io::Error>
where
    FinetuneRecord: From<&'a T>,
{
    let mut w = BufWriter::new(File::create(out)?);
    for ex in examples {
        serde_json::to_writer(&mut w, &FinetuneRecord::from(ex))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(examples.len())
}

/// Inverse of [`export_finetune_format`] for clarification examples.
pub fn read_finetune_clarifications(path: &Path) -> Result<Vec<ClarificationExample>, DatagenError> {
    let raw = fs::read_to_string(path)?;
    let bad = |line: usize, message: &str| DatagenError::ExistingOutput {
        path: path.display().to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: FinetuneRecord = serde_json::from_str(line).map_err(|e| bad(i + 1, &e.to_string()))?;
        let [user, assistant] = rec.messages.as_slice() else {
            return Err(bad(i + 1, "expected exactly two messages"));
        };
        let questions = assistant
            .content
            .lines()
            .enumerate()
            .map(|(k, l)| {
                l.strip_prefix(&format!("{}. ", k + 1))
                    .map(str::to_string)
                    .ok_or_else(|| bad(i + 1, "assistant content is not a numbered list"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ClarificationExample {
            prompt: user.content.clone(),
            questions,
            category: rec.category.ok_or_else(|| bad(i + 1, "missing category"))?,
        });
    }
    Ok(out)
}

/// Scripted teacher for offline campaigns. Replies are keyed on the request
/// index so retries and parallelism do not change the outcome.
#[derive(Debug, Clone)]
pub struct TeacherStub {
    pub seed: u64,
    /// Probability that a reply is not a parseable JSON object.
    pub malformed_rate: f64,
    /// Indices whose every attempt times out.
    pub timeouts: BTreeSet<u64>,
}

impl TeacherStub {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            malformed_rate: 0.0,
            timeouts: BTreeSet::new(),
        }
    }

    pub fn malformed(mut self, rate: f64) -> Self {
        self.malformed_rate = rate;
        self
    }

    pub fn timing_out(mut self, indices: impl IntoIterator<Item = u64>) -> Self {
        self.timeouts.extend(indices);
        self
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn reply(&self, request: &ChatRequest) -> StubReply {
        let index = request.request_key.unwrap_or(0);
        if self.timeouts.contains(&index) {
            return StubReply::Fault(Fault::Timeout);
        }
        let mut rng = self.rng(index);
        if rng.random_bool(self.malformed_rate.clamp(0.0, 1.0)) {
            return StubReply::text(format!("Sure! Here is sample {index}: prompt = fix my code, label = three"));
        }
        let body = request.last_user_content().unwrap_or_default();
        let reply = if body.contains("\"label\"") {
            serde_json::json!({
                "prompt": format!("Synthetic request {index}: make the parser faster"),
                "label": rng.random_range(1..=4),
            })
        } else {
            let k = rng.random_range(1..=3);
            serde_json::json!({
                "prompt": format!("Synthetic request {index}"),
                "questions": (1..=k).map(|q| format!("Question {q} about request {index}?")).collect::<Vec<_>>(),
            })
        };
        StubReply::text(reply.to_string())
    }

    pub fn into_transport(self) -> StubTransport {
        StubTransport::from_fn(move |req, _| self.reply(req))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backend::{BackendClient, BackendConfig, ManualClock};
    use crate::template::defaults;

    fn teacher(stub: TeacherStub) -> BackendClient {
        let mut config = BackendConfig::new("http://stub", "teacher");
        config.max_retries = 2;
        config.requests_per_minute = 10_000;
        BackendClient::new(config, Arc::new(stub.into_transport()), Arc::new(ManualClock::new())).unwrap()
    }

    fn classifier_template() -> PromptTemplate {
        PromptTemplate::new(defaults::DATAGEN_CLASSIFIER)
    }

    #[test]
    fn all_valid_replies_parse() {
        let t = teacher(TeacherStub::new(1));
        let (ex, report) = Campaign::new(&t).generate_classifier_dataset(&classifier_template(), 10, None).unwrap();
        assert_eq!(ex.len(), 10);
        assert_eq!(report.parse_rate(), 1.0);
        assert!(ex.iter().all(|e| (1..=4).contains(&e.clarity_label)));
    }

    #[test]
    fn alternating_timeouts_are_accounted() {
        let t = teacher(TeacherStub::new(1).timing_out([0, 2]));
        let (ex, report) = Campaign::new(&t).generate_classifier_dataset(&classifier_template(), 4, None).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(
            report,
            GenerationCampaignReport {
                attempted: 4,
                parsed: 2,
                failed_parse: 0,
                failed_timeout: 2
            }
        );
    }

    #[test]
    fn category_mix_balances() {
        let t = teacher(TeacherStub::new(3));
        let (ex, _) = Campaign::new(&t)
            .generate_clarification_dataset(
                &PromptTemplate::new(defaults::DATAGEN_CODE_ONLY),
                &PromptTemplate::new(defaults::DATAGEN_NATURAL_LANGUAGE),
                10,
                CategoryMix::default(),
                None,
            )
            .unwrap();
        let code = ex
            .iter()
            .filter(|e| e.category == ClarificationCategory::CodeOnlyUnderspecified)
            .count();
        assert_eq!((code, ex.len() - code), (5, 5));

        let (ex, report) = Campaign::new(&t)
            .generate_clarification_dataset(
                &PromptTemplate::new(defaults::DATAGEN_CODE_ONLY),
                &PromptTemplate::new(defaults::DATAGEN_NATURAL_LANGUAGE),
                1,
                CategoryMix::default(),
                None,
            )
            .unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(report.attempted, 1);
    }

    #[test]
    fn mix_parsing() {
        assert_eq!("50/50".parse::<CategoryMix>().unwrap(), CategoryMix::default());
        assert_eq!("0.25".parse::<CategoryMix>().unwrap().natural_language, 0.75);
        assert!("1.5".parse::<CategoryMix>().is_err());
        assert!("a/b".parse::<CategoryMix>().is_err());
        assert!(CategoryMix::new(0.6, 0.6).is_err());
    }

    #[test]
    fn zero_n_is_config_error() {
        let t = teacher(TeacherStub::new(1));
        assert!(matches!(
            Campaign::new(&t).generate_classifier_dataset(&classifier_template(), 0, None),
            Err(DatagenError::ZeroCount)
        ));
    }

    #[test]
    fn parallel_matches_sequential() {
        let stub = TeacherStub::new(9).malformed(0.3).timing_out([5, 11]);
        let t = teacher(stub);
        let seq = Campaign::new(&t).generate_classifier_dataset(&classifier_template(), 40, None).unwrap();
        let par = Campaign::new(&t)
            .with_width(8)
            .generate_classifier_dataset(&classifier_template(), 40, None)
            .unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn resume_appends_only_missing_indices() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("clf.jsonl");
        let stub = TeacherStub::new(4).malformed(0.2).timing_out([3]);
        let full_client = teacher(stub.clone());
        let full = Campaign::new(&full_client)
            .generate_classifier_dataset(&classifier_template(), 30, None)
            .unwrap();

        let counter_stub = stub.into_transport();
        let calls = counter_stub.call_counter();
        let mut config = BackendConfig::new("http://stub", "t");
        config.max_retries = 0;
        let client = BackendClient::new(config, Arc::new(counter_stub), Arc::new(ManualClock::new())).unwrap();
        Campaign::new(&client)
            .generate_classifier_dataset(&classifier_template(), 12, Some(&out))
            .unwrap();
        assert_eq!(calls.get(), 12);
        // Simulate a torn write at the end of the file.
        let mut f = OpenOptions::new().append(true).open(&out).unwrap();
        f.write_all(b"{\"kind\":\"exam").unwrap();
        drop(f);
        let resumed = Campaign::new(&client)
            .generate_classifier_dataset(&classifier_template(), 30, Some(&out))
            .unwrap();
        assert_eq!(calls.get(), 30);
        assert_eq!(resumed, full);
        let report = validate_dataset(&out).unwrap();
        assert!(report.is_clean(), "{:?}", report.violations);
        assert_eq!(report.examples as u64 + report.failures as u64, 30);
    }

    #[test]
    fn validation_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"schema\":\"classifier-examples\",\"version\":1}\n",
                "{\"kind\":\"example\",\"index\":0,\"prompt\":\"p\",\"clarity_label\":3}\n",
                "{\"kind\":\"example\",\"index\":1,\"prompt\":\"p\",\"clarity_label\":5}\n",
            ),
        )
        .unwrap();
        let report = validate_dataset(&path).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].line, 3);

        fs::write(
            &path,
            concat!(
                "{\"schema\":\"clarification-examples\",\"version\":1}\n",
                "{\"kind\":\"example\",\"index\":0,\"prompt\":\"p\",\"questions\":[],\"category\":\"code_only_underspecified\"}\n",
            ),
        )
        .unwrap();
        let report = validate_dataset(&path).unwrap();
        assert_eq!(report.violations[0].line, 2);
        assert!(report.violations[0].message.contains("empty"));

        fs::write(&path, "{\"kind\":\"example\"}\n").unwrap();
        assert!(!validate_dataset(&path).unwrap().is_clean());
    }

    #[test]
    fn finetune_export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ft.jsonl");
        let ex = vec![ClarificationExample {
            prompt: "def f(x):\n    pass".into(),
            questions: vec!["What should f return?".into(), "Which Python version?".into()],
            category: ClarificationCategory::CodeOnlyUnderspecified,
        }];
        export_finetune_format(&ex, &path).unwrap();
        let raw = fs::read_to_string(&path).unwrap();
        let rec: FinetuneRecord = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
        assert_eq!(rec.messages.len(), 2);
        assert_eq!(rec.messages[1].content, "1. What should f return?\n2. Which Python version?");
        assert_eq!(read_finetune_clarifications(&path).unwrap(), ex);

        export_finetune_format::<ClarificationExample>(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
    }
}
