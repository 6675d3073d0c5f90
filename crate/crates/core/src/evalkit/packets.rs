use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::template::{defaults, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PrecisionFocus,
    ImmediateEditability,
    ContextualFit,
    AnswerFaithfulness,
    Correctness,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::PrecisionFocus => "Precision and focus",
            Metric::ImmediateEditability => "Immediate editability",
            Metric::ContextualFit => "Contextual fit",
            Metric::AnswerFaithfulness => "Answer faithfulness",
            Metric::Correctness => "Correctness",
        }
    }
}

/// Which pair of outputs a study compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// Two sets of clarification questions for the same prompt.
    ClarificationQuestions,
    /// Two final answers for the same prompt.
    FinalAnswers,
}

impl StudyKind {
    pub fn metrics(self) -> &'static [Metric] {
        match self {
            StudyKind::ClarificationQuestions => {
                &[Metric::PrecisionFocus, Metric::ImmediateEditability, Metric::ContextualFit]
            }
            StudyKind::FinalAnswers => &[
                Metric::PrecisionFocus,
                Metric::ContextualFit,
                Metric::AnswerFaithfulness,
                Metric::Correctness,
            ],
        }
    }

    pub fn rates(self, metric: Metric) -> bool {
        self.metrics().contains(&metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// One prompt with the system-under-test output and the baseline output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    pub item_id: String,
    pub prompt: String,
    pub ours: String,
    pub baseline: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketItem {
    pub item_id: String,
    pub prompt: String,
    pub side_a: String,
    pub side_b: String,
    /// Hidden assignment; never rendered into participant documents.
    pub ours: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPacket {
    pub participant_id: String,
    pub study: StudyKind,
    pub items: Vec<PacketItem>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub participant_id: String,
    pub item_id: String,
    pub ours: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub study: StudyKind,
    pub seed: u64,
    pub entries: Vec<KeyEntry>,
}

impl AnswerKey {
    pub fn from_packets(packets: &[StudyPacket]) -> Self {
        let study = packets.first().map(|p| p.study).unwrap_or(StudyKind::ClarificationQuestions);
        let seed = packets.first().map(|p| p.seed).unwrap_or(0);
        let entries = packets
            .iter()
            .flat_map(|p| {
                p.items.iter().map(|i| KeyEntry {
                    participant_id: p.participant_id.clone(),
                    item_id: i.item_id.clone(),
                    ours: i.ours,
                })
            })
            .collect();
        Self { study, seed, entries }
    }
}

/// Deals items to participants and randomizes the A/B side of every
/// (participant, item) pair. When there are enough items, participants get
/// disjoint items; otherwise each participant gets a distinct sample.
pub fn build_packets(
    items: &[StudyItem],
    participants: usize,
    per_participant: usize,
    study: StudyKind,
    seed: u64,
) -> Result<Vec<StudyPacket>, EvalError> {
    if participants == 0 {
        return Err(EvalError::NoParticipants);
    }
    if per_participant > items.len() {
        return Err(EvalError::NotEnoughItems {
            needed: per_participant,
            available: items.len(),
        });
    }
    let mut ids = HashSet::new();
    if let Some(dup) = items.iter().find(|i| !ids.insert(i.item_id.as_str())) {
        return Err(EvalError::DuplicateItem(dup.item_id.clone()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let disjoint = items.len() >= participants * per_participant;
    let width = participants.to_string().len().max(2);

    let mut packets = Vec::with_capacity(participants);
    for p in 0..participants {
        let chosen: Vec<usize> = if disjoint {
            order[p * per_participant..(p + 1) * per_participant].to_vec()
        } else {
            let mut own = order.clone();
            own.shuffle(&mut rng);
            own.truncate(per_participant);
            own
        };
        let packet_items = chosen
            .into_iter()
            .map(|idx| {
                let item = &items[idx];
                let ours = if rng.random_bool(0.5) { Side::A } else { Side::B };
                let (side_a, side_b) = match ours {
                    Side::A => (item.ours.clone(), item.baseline.clone()),
                    Side::B => (item.baseline.clone(), item.ours.clone()),
                };
                PacketItem {
                    item_id: item.item_id.clone(),
                    prompt: item.prompt.clone(),
                    side_a,
                    side_b,
                    ours,
                }
            })
            .collect();
        packets.push(StudyPacket {
            participant_id: format!("p{:0width$}", p + 1),
            study,
            items: packet_items,
            seed,
        });
    }
    Ok(packets)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub participant_id: String,
    pub item_id: String,
    pub metric: Metric,
    pub score: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrientedRating {
    pub metric: Metric,
    pub score: u8,
}

/// Raters score 1 = A much better .. 5 = B much better. Oriented scores put
/// the system under test at 5.
pub fn orient(raw: u8, ours: Side) -> u8 {
    match ours {
        Side::B => raw,
        Side::A => 6 - raw,
    }
}

pub fn unblind_and_orient(ratings: &[RatingRecord], key: &AnswerKey) -> Result<Vec<OrientedRating>, EvalError> {
    let lookup: HashMap<(&str, &str), Side> = key
        .entries
        .iter()
        .map(|e| ((e.participant_id.as_str(), e.item_id.as_str()), e.ours))
        .collect();
    ratings
        .iter()
        .map(|r| {
            if !(1..=5).contains(&r.score) {
                return Err(EvalError::ScoreOutOfRange(r.score as i64));
            }
            if !key.study.rates(r.metric) {
                return Err(EvalError::MetricNotInStudy {
                    metric: r.metric,
                    study: key.study,
                });
            }
            let ours = lookup
                .get(&(r.participant_id.as_str(), r.item_id.as_str()))
                .ok_or_else(|| EvalError::UnknownItem {
                    participant: r.participant_id.clone(),
                    item: r.item_id.clone(),
                })?;
            Ok(OrientedRating {
                metric: r.metric,
                score: orient(r.score, *ours),
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct RawRating {
    participant_id: String,
    item_id: String,
    metric: Metric,
    score: Option<i64>,
}

/// Reads hand-filled JSON-lines ratings; blank lines and `#` comments are skipped.
pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>, EvalError> {
    let raw = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| EvalError::BadRecord { line: i + 1, message };
        let r: RawRating = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let score = r.score.ok_or_else(|| bad("score not filled in".into()))?;
        if !(1..=5).contains(&score) {
            return Err(bad(format!("score {score} outside 1..=5")));
        }
        out.push(RatingRecord {
            participant_id: r.participant_id,
            item_id: r.item_id,
            metric: r.metric,
            score: score as u8,
        });
    }
    Ok(out)
}

/// Words that would reveal which side is which.
pub const SOURCE_TOKENS: [&str; 8] = [
    "ours",
    "baseline",
    "fine-tuned",
    "finetuned",
    "our approach",
    "our model",
    "answer key",
    "assignment",
];

/// Source-identifying tokens present as whole words in `doc`.
pub fn blinding_violations(doc: &str) -> Vec<&'static str> {
    let lower = doc.to_lowercase();
    SOURCE_TOKENS
        .iter()
        .copied()
        .filter(|token| {
            lower.match_indices(token).any(|(at, _)| {
                let before = lower[..at].chars().next_back();
                let after = lower[at + token.len()..].chars().next();
                !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
            })
        })
        .collect()
}

fn fenced(text: &str) -> String {
    let mut fence = "```".to_string();
    while text.contains(&fence) {
        fence.push('`');
    }
    format!("{fence}\n{text}\n{fence}")
}

pub fn render_study_doc(packet: &StudyPacket, instructions: &PromptTemplate) -> String {
    let mut doc = instructions.render(&[("participant", &packet.participant_id)]);
    if !doc.ends_with('\n') {
        doc.push('\n');
    }
    for (n, item) in packet.items.iter().enumerate() {
        let _ = write!(
            doc,
            "\n---\n\n## Item {} (id: {})\n\n### Request\n\n{}\n\n### Option A\n\n{}\n\n### Option B\n\n{}\n\n### Scores\n\n",
            n + 1,
            item.item_id,
            fenced(&item.prompt),
            item.side_a,
            item.side_b,
        );
        for metric in packet.study.metrics() {
            let _ = writeln!(doc, "- {}: ___", metric.label());
        }
    }
    doc
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyExport {
    pub documents: Vec<PathBuf>,
    pub key: PathBuf,
    pub ratings_template: PathBuf,
}

/// Writes one markdown document per participant, a blank ratings file and
/// the answer key. Refuses to write a document that names a source.
pub fn export_study_doc(
    packets: &[StudyPacket],
    instructions: Option<&PromptTemplate>,
    out_dir: &Path,
) -> Result<StudyExport, EvalError> {
    let default_instructions = PromptTemplate::new(defaults::STUDY_INSTRUCTIONS);
    let instructions = instructions.unwrap_or(&default_instructions);
    fs::create_dir_all(out_dir)?;
    let mut rendered = Vec::with_capacity(packets.len());
    for packet in packets {
        let doc = render_study_doc(packet, instructions);
        if let Some(token) = blinding_violations(&doc).first() {
            return Err(EvalError::BlindingLeak(token.to_string()));
        }
        rendered.push((out_dir.join(format!("{}.md", packet.participant_id)), doc));
    }
    let mut documents = Vec::new();
    for (path, doc) in rendered {
        fs::write(&path, doc)?;
        documents.push(path);
    }

    let mut template = String::new();
    for packet in packets {
        for item in &packet.items {
            for metric in packet.study.metrics() {
                let line = serde_json::json!({
                    "participant_id": packet.participant_id,
                    "item_id": item.item_id,
                    "metric": metric,
                    "score": null,
                });
                template.push_str(&line.to_string());
                template.push('\n');
            }
        }
    }
    let ratings_template = out_dir.join("ratings_template.jsonl");
    fs::write(&ratings_template, template)?;

    let key = out_dir.join("key.json");
    let key_json = serde_json::to_string_pretty(&AnswerKey::from_packets(packets)).expect("key serializes");
    fs::write(&key, key_json + "\n")?;
    Ok(StudyExport {
        documents,
        key,
        ratings_template,
    })
}

/// Participant -> item ids, for overlap checks.
pub fn assignments_by_participant(packets: &[StudyPacket]) -> BTreeMap<String, Vec<String>> {
    packets
        .iter()
        .map(|p| (p.participant_id.clone(), p.items.iter().map(|i| i.item_id.clone()).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn items(n: usize) -> Vec<StudyItem> {
        (0..n)
            .map(|i| StudyItem {
                item_id: format!("item-{i:03}"),
                prompt: format!("prompt {i}"),
                ours: format!("questions from system X for {i}"),
                baseline: format!("questions from system Y for {i}"),
            })
            .collect()
    }

    #[test]
    fn hundred_items_partition_across_ten_participants() {
        let packets = build_packets(&items(100), 10, 10, StudyKind::ClarificationQuestions, 42).unwrap();
        assert_eq!(packets.len(), 10);
        let mut all = HashSet::new();
        for p in &packets {
            assert_eq!(p.items.len(), 10);
            for i in &p.items {
                assert!(all.insert(i.item_id.clone()), "{} reused", i.item_id);
            }
        }
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn same_seed_same_packets() {
        let a = build_packets(&items(30), 4, 5, StudyKind::FinalAnswers, 7).unwrap();
        let b = build_packets(&items(30), 4, 5, StudyKind::FinalAnswers, 7).unwrap();
        assert_eq!(a, b);
        let c = build_packets(&items(30), 4, 5, StudyKind::FinalAnswers, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sides_hold_the_right_content() {
        for p in build_packets(&items(20), 2, 10, StudyKind::ClarificationQuestions, 1).unwrap() {
            for i in p.items {
                let ours = match i.ours {
                    Side::A => &i.side_a,
                    Side::B => &i.side_b,
                };
                assert!(ours.contains("system X"));
            }
        }
    }

    #[test]
    fn overlapping_when_items_are_scarce() {
        let packets = build_packets(&items(8), 3, 5, StudyKind::ClarificationQuestions, 3).unwrap();
        for (_, ids) in assignments_by_participant(&packets) {
            let unique: HashSet<_> = ids.iter().collect();
            assert_eq!(unique.len(), 5);
        }
        assert!(matches!(
            build_packets(&items(3), 1, 5, StudyKind::ClarificationQuestions, 3),
            Err(EvalError::NotEnoughItems { .. })
        ));
    }

    #[test]
    fn orientation() {
        assert_eq!(orient(5, Side::B), 5);
        assert_eq!(orient(2, Side::A), 4);
        for s in 1..=5 {
            assert_eq!(orient(orient(s, Side::A), Side::A), s);
            assert_eq!(orient(s, Side::B), s);
        }
        assert_eq!(orient(3, Side::A), 3);
    }

    #[test]
    fn unblinding_checks_metric_and_item() {
        let packets = build_packets(&items(2), 1, 2, StudyKind::FinalAnswers, 1).unwrap();
        let key = AnswerKey::from_packets(&packets);
        let item = &packets[0].items[0];
        let rating = |metric, score| RatingRecord {
            participant_id: "p01".into(),
            item_id: item.item_id.clone(),
            metric,
            score,
        };
        let oriented = unblind_and_orient(&[rating(Metric::Correctness, 2)], &key).unwrap();
        assert_eq!(oriented[0].score, orient(2, item.ours));
        assert!(matches!(
            unblind_and_orient(&[rating(Metric::ImmediateEditability, 2)], &key),
            Err(EvalError::MetricNotInStudy { .. })
        ));
        assert!(matches!(
            unblind_and_orient(&[rating(Metric::Correctness, 6)], &key),
            Err(EvalError::ScoreOutOfRange(6))
        ));
        let mut stray = rating(Metric::Correctness, 3);
        stray.item_id = "missing".into();
        assert!(matches!(unblind_and_orient(&[stray], &key), Err(EvalError::UnknownItem { .. })));
    }

    #[test]
    fn documents_are_blind_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let packets = build_packets(&items(20), 2, 10, StudyKind::ClarificationQuestions, 5).unwrap();
        let export = export_study_doc(&packets, None, dir.path()).unwrap();
        assert_eq!(export.documents.len(), 2);
        let first: Vec<String> = export.documents.iter().map(|p| fs::read_to_string(p).unwrap()).collect();
        for doc in &first {
            assert!(blinding_violations(doc).is_empty());
            assert!(!doc.contains("\"ours\""));
        }
        let again = export_study_doc(&packets, None, dir.path()).unwrap();
        let second: Vec<String> = again.documents.iter().map(|p| fs::read_to_string(p).unwrap()).collect();
        assert_eq!(first, second);
        let key: AnswerKey = serde_json::from_str(&fs::read_to_string(&export.key).unwrap()).unwrap();
        assert_eq!(key.entries.len(), 20);
    }

    #[test]
    fn leaky_content_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut it = items(1);
        it[0].baseline = "Baseline model output".into();
        let packets = build_packets(&it, 1, 1, StudyKind::ClarificationQuestions, 5).unwrap();
        assert!(matches!(
            export_study_doc(&packets, None, dir.path()),
            Err(EvalError::BlindingLeak(t)) if t == "baseline"
        ));
        assert!(blinding_violations("Pours and detours").is_empty());
    }

    #[test]
    fn ratings_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        fs::write(
            &path,
            "# filled by p01\n{\"participant_id\":\"p01\",\"item_id\":\"x\",\"metric\":\"contextual_fit\",\"score\":4}\n",
        )
        .unwrap();
        assert_eq!(read_ratings(&path).unwrap()[0].score, 4);
        fs::write(
            &path,
            "{\"participant_id\":\"p01\",\"item_id\":\"x\",\"metric\":\"contextual_fit\",\"score\":null}\n",
        )
        .unwrap();
        assert!(matches!(read_ratings(&path), Err(EvalError::BadRecord { line: 1, .. })));
    }
}
