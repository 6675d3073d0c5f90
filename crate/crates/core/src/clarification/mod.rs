//! Clarification question generation and the bounded clarification loop.

mod questions;
mod session;

pub use questions::{parse_questions, ClarifierBinding, ClarifyError};
pub use session::{run_session, EngineError, EventSink, NullSink, SessionEngine};
