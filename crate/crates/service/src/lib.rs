//! Front ends for the clarification pipeline: configuration wiring, the
//! JSON HTTP API, the terminal chat loop and batch runs.

pub mod batch;
pub mod chat;
pub mod config;
pub mod http;
