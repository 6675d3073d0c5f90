//! Clarification-driven coding assistant.
//!
//! A prompt is scored on a 4-point clarity scale; unclear prompts go through
//! a bounded loop of clarification questions before the final answer is
//! generated. The crate also carries the synthetic-data generator and the
//! evaluation toolkit used to measure the assistant.

pub mod answering;
pub mod backend;
pub mod clarification;
pub mod classifier;
pub mod datagen;
pub mod domain;
pub mod evalkit;
pub mod pipeline;
pub mod template;

pub use domain::{
    assemble_context, transition, ClarificationResponses, ClarificationSet, ClarityAssessment, ClarityLevel,
    ClarityThreshold, DialogueState, PipelineEvent, Route, Status, UserPrompt,
};
