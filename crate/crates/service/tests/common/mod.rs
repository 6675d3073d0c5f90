//! Shared by the golden and acceptance test targets.
#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use clarify_core::clarification::NullSink;
use clarify_service::chat::{chat, ChatOutcome};
use clarify_service::config::{wire, ServiceConfig};

pub const GOLDEN: [&str; 3] = ["clear", "partial", "skip_all"];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden").join(name)
}

/// Runs the chat loop on a fixture's scripted stdin and returns stdout.
pub fn run_fixture(name: &str) -> (ChatOutcome, String) {
    let dir = fixture(name);
    let wiring = wire(&ServiceConfig::load(&dir.join("config.toml")).unwrap()).unwrap();
    let stdin = fs::read(dir.join("stdin.txt")).unwrap();
    let mut out = Vec::new();
    let outcome = chat(&wiring.engine, "golden", &mut stdin.as_slice(), &mut out, &mut NullSink).unwrap();
    (outcome, String::from_utf8(out).unwrap())
}

pub fn expected(name: &str) -> String {
    fs::read_to_string(fixture(name).join("expected.txt")).unwrap()
}
