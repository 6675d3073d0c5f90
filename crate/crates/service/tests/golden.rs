mod common;

use clarify_core::clarification::NullSink;
use clarify_service::chat::{chat, ChatOutcome};
use clarify_service::config::{wire, ServiceConfig};

use common::{expected, run_fixture};

fn check(name: &str) {
    let (outcome, got) = run_fixture(name);
    assert_eq!(outcome, ChatOutcome::Answered);
    assert_eq!(got, expected(name), "transcript {name} drifted");
}

#[test]
fn clear_prompt_transcript() {
    check("clear");
}

#[test]
fn partial_answer_transcript() {
    check("partial");
}

#[test]
fn skip_all_transcript() {
    check("skip_all");
}

fn inline_config(answerer_replies: &str) -> ServiceConfig {
    ServiceConfig::parse(&format!(
        r#"
        [backends.q]
        kind = "stub"
        replies = ["1. Which format?"]
        [backends.a]
        kind = "stub"
        replies = {answerer_replies}
        [classifier]
        kind = "stub"
        levels = [4]
        [clarifier]
        backend = "q"
        [answerer]
        backend = "a"
        "#
    ))
    .unwrap()
}

#[test]
fn aborted_session_exits_nonzero() {
    let wiring = wire(&inline_config(r#"[{ fault = "timeout" }]"#)).unwrap();
    let mut out = Vec::new();
    let outcome = chat(&wiring.engine, "x", &mut "sort a list\n\n".as_bytes(), &mut out, &mut NullSink).unwrap();
    assert_eq!(outcome, ChatOutcome::Aborted);
    assert_ne!(outcome.exit_code(), 0);
    assert!(String::from_utf8(out).unwrap().contains("session aborted: answer:"));
}

#[test]
fn empty_prompt_exits_nonzero() {
    let wiring = wire(&inline_config(r#"["ok"]"#)).unwrap();
    let mut out = Vec::new();
    let outcome = chat(&wiring.engine, "x", &mut "\n\n   \n".as_bytes(), &mut out, &mut NullSink).unwrap();
    assert_eq!(outcome, ChatOutcome::EmptyPrompt);
    assert_ne!(outcome.exit_code(), 0);
}
