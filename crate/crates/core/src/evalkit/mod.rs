//! Evaluation toolkit: blinded pairwise study packets, Likert statistics,
//! a simulated user for scripted clarification runs, and perplexity.

mod packets;
mod perplexity;
mod simulate;
mod stats;

pub use packets::{
    blinding_violations, build_packets, export_study_doc, orient, read_ratings, render_study_doc, unblind_and_orient,
    assignments_by_participant, AnswerKey, KeyEntry, Metric, OrientedRating, PacketItem, RatingRecord, Side, StudyExport, StudyItem, StudyKind,
    StudyPacket, SOURCE_TOKENS,
};
pub use perplexity::{compare_perplexity, corpus_perplexity, perplexity, PerplexityError};
pub use simulate::{parse_numbered_answers, SimulatedUser};
pub use stats::{
    describe, favorability, one_sample_test, summarize, wilcoxon_signed_rank, Degenerate, MetricSummary,
    OneSampleTest, ShareBreakdown, StatsError, StatsSummary, WilcoxonResult, NEUTRAL_RATING,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need {needed} items per participant but only {available} items exist")]
    NotEnoughItems { needed: usize, available: usize },
    #[error("no participants")]
    NoParticipants,
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error("rating references unknown item {participant}/{item}")]
    UnknownItem { participant: String, item: String },
    #[error("score {0} is outside 1..=5")]
    ScoreOutOfRange(i64),
    #[error("metric {metric:?} is not rated in a {study:?} study")]
    MetricNotInStudy { metric: Metric, study: StudyKind },
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("rendered document leaks source token {0:?}")]
    BlindingLeak(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
