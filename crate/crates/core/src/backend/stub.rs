use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{BackendConfig, ChatRequest, Clock, RawReply, SystemClock, TokenLogprob, Transport, TransportError};

/// Injected failure for one stub call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Timeout,
    Status(u16),
    ConnectionReset,
    Malformed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StubReply {
    Text {
        text: String,
        logprobs: Option<Vec<TokenLogprob>>,
    },
    Fault(Fault),
}

impl StubReply {
    pub fn text(text: impl Into<String>) -> Self {
        StubReply::Text {
            text: text.into(),
            logprobs: None,
        }
    }

    pub fn with_logprobs(text: impl Into<String>, logprobs: Vec<(&str, f64)>) -> Self {
        StubReply::Text {
            text: text.into(),
            logprobs: Some(
                logprobs
                    .into_iter()
                    .map(|(token, logprob)| TokenLogprob {
                        token: token.to_string(),
                        logprob,
                    })
                    .collect(),
            ),
        }
    }
}

type Responder = dyn Fn(&ChatRequest, u64) -> StubReply + Send + Sync;

/// Shared view of how many calls a stub has served.
#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicU64>);

impl CallCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Deterministic in-process backend. Replies come from a responder closure
/// given the request and the 0-based call number.
pub struct StubTransport {
    responder: Box<Responder>,
    calls: CallCounter,
    delay: Duration,
    clock: Arc<dyn Clock>,
}

impl StubTransport {
    pub fn from_fn(responder: impl Fn(&ChatRequest, u64) -> StubReply + Send + Sync + 'static) -> Self {
        Self {
            responder: Box::new(responder),
            calls: CallCounter::default(),
            delay: Duration::ZERO,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn always(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::from_fn(move |_, _| StubReply::text(text.clone()))
    }

    /// Replies in order; the last reply repeats once the script runs out.
    pub fn scripted(replies: Vec<StubReply>) -> Self {
        assert!(!replies.is_empty(), "stub script must not be empty");
        let replies = Mutex::new(replies);
        Self::from_fn(move |_, call| {
            let replies = replies.lock().expect("script lock");
            let i = (call as usize).min(replies.len() - 1);
            replies[i].clone()
        })
    }

    /// Replies with the content of the last user message.
    pub fn echo() -> Self {
        Self::from_fn(|req, _| StubReply::text(req.last_user_content().unwrap_or_default()))
    }

    /// Every call sleeps `delay` on `clock` before replying.
    pub fn with_delay(mut self, delay: Duration, clock: Arc<dyn Clock>) -> Self {
        self.delay = delay;
        self.clock = clock;
        self
    }

    pub fn call_counter(&self) -> CallCounter {
        self.calls.clone()
    }
}

impl Transport for StubTransport {
    fn send(&self, _config: &BackendConfig, request: &ChatRequest) -> Result<RawReply, TransportError> {
        let call = self.calls.0.fetch_add(1, Ordering::SeqCst);
        self.clock.sleep(self.delay);
        match (self.responder)(request, call) {
            StubReply::Text { text, logprobs } => Ok(RawReply {
                text,
                token_logprobs: logprobs,
            }),
            StubReply::Fault(Fault::Timeout) => Err(TransportError::Timeout),
            StubReply::Fault(Fault::Status(status)) => Err(TransportError::Status {
                status,
                body: String::new(),
            }),
            StubReply::Fault(Fault::ConnectionReset) => Err(TransportError::Connection("connection reset".into())),
            StubReply::Fault(Fault::Malformed) => Err(TransportError::InvalidResponse("stub payload is not JSON".into())),
        }
    }
}
