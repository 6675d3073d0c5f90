use std::io::{self, BufRead, Write};

use clarify_core::clarification::{EventSink, SessionEngine};
use clarify_core::{ClarificationResponses, Status, UserPrompt};

/// How a chat ended, for the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatOutcome {
    Answered,
    Aborted,
    EmptyPrompt,
}

impl ChatOutcome {
    pub fn exit_code(self) -> i32 {
        match self {
            ChatOutcome::Answered => 0,
            ChatOutcome::EmptyPrompt => 1,
            ChatOutcome::Aborted => 2,
        }
    }
}

fn read_line(input: &mut dyn BufRead) -> io::Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim_end_matches(['\n', '\r']).to_string()))
}

/// Terminal conversation. The prompt is every line up to the first blank
/// one; each question then takes one line, where a blank line skips it.
pub fn chat(
    engine: &SessionEngine,
    session_id: &str,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    sink: &mut dyn EventSink,
) -> anyhow::Result<ChatOutcome> {
    writeln!(out, "Describe your coding task. Finish with an empty line.")?;
    let mut lines = Vec::new();
    while let Some(line) = read_line(input)? {
        if line.trim().is_empty() {
            if lines.is_empty() {
                continue;
            }
            break;
        }
        lines.push(line);
    }
    let Ok(prompt) = UserPrompt::now(lines.join("\n")) else {
        writeln!(out, "error: the prompt is empty")?;
        return Ok(ChatOutcome::EmptyPrompt);
    };

    let mut state = engine.start(session_id, prompt, sink)?;
    while let Some(set) = state.pending_questions().cloned() {
        writeln!(
            out,
            "\nClarification round {} of {}. Answer what you can; an empty line skips a question.",
            set.round_index, state.max_rounds
        )?;
        let mut responses = ClarificationResponses::new(set.round_index);
        for (n, q) in set.questions.iter().enumerate() {
            writeln!(out, "Q{}: {}", n + 1, q.text)?;
            write!(out, "> ")?;
            out.flush()?;
            let answer = read_line(input)?.unwrap_or_default();
            writeln!(out)?;
            if !answer.trim().is_empty() {
                responses = responses.with_answer(q.id.clone(), answer.trim());
            }
        }
        state = engine.respond(state, responses, sink)?;
    }

    match state.status {
        Status::Answered => {
            writeln!(out, "\n=== Answer ===")?;
            writeln!(out, "{}", state.final_answer.as_deref().unwrap_or_default())?;
            Ok(ChatOutcome::Answered)
        }
        _ => {
            writeln!(
                out,
                "\nerror: session aborted: {}",
                state.abort_reason.as_deref().unwrap_or("unknown reason")
            )?;
            Ok(ChatOutcome::Aborted)
        }
    }
}
