//! OpenAI-compatible `/v1/chat/completions` transport.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendConfig, BackendError, ChatMessage, ChatRequest, RawReply, TokenLogprob, Transport, TransportError};

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: reqwest::Url,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

impl HttpTransport {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = Self::endpoint(&config.base_url)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        Ok(Self { client, endpoint })
    }

    pub fn endpoint(base_url: &str) -> Result<reqwest::Url, BackendError> {
        let url = format!("{}/v1/chat/completions", base_url.trim_end_matches('/'));
        reqwest::Url::parse(&url).map_err(|e| BackendError::InvalidConfig(format!("base_url {base_url:?}: {e}")))
    }

    pub fn encode(config: &BackendConfig, request: &ChatRequest) -> Value {
        serde_json::to_value(WireRequest {
            model: &config.model_name,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
            logprobs: request.want_logprobs,
        })
        .expect("wire request serializes")
    }

    pub fn decode(body: &str) -> Result<RawReply, TransportError> {
        let parsed: WireResponse =
            serde_json::from_str(body).map_err(|e| TransportError::InvalidResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| TransportError::InvalidResponse("no choices".into()))?;
        let text = choice
            .message
            .content
            .ok_or_else(|| TransportError::InvalidResponse("choice has no content".into()))?;
        Ok(RawReply {
            text,
            token_logprobs: choice.logprobs.and_then(|l| l.content),
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, config: &BackendConfig, request: &ChatRequest) -> Result<RawReply, TransportError> {
        let mut builder = self.client.post(self.endpoint.clone()).json(&Self::encode(config, request));
        if let Ok(key) = std::env::var(&config.api_key_env) {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connection(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body,
            });
        }
        Self::decode(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_joins_base_url() {
        let url = HttpTransport::endpoint("http://localhost:8000/").unwrap();
        assert_eq!(url.as_str(), "http://localhost:8000/v1/chat/completions");
        assert!(HttpTransport::endpoint("not a url").is_err());
    }

    #[test]
    fn encodes_wire_request() {
        let config = BackendConfig::new("http://x", "local-coder");
        let mut req = ChatRequest::new(vec![ChatMessage::system("be brief"), ChatMessage::user("hi")]);
        req.want_logprobs = true;
        let v = HttpTransport::encode(&config, &req);
        assert_eq!(v["model"], "local-coder");
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "hi");
        assert_eq!(v["logprobs"], true);
        assert_eq!(v["max_tokens"], 1024);
    }

    #[test]
    fn decodes_choice_with_logprobs() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"3"},
            "logprobs":{"content":[{"token":"3","logprob":-0.01,"bytes":[51]}]}}]}"#;
        let reply = HttpTransport::decode(body).unwrap();
        assert_eq!(reply.text, "3");
        assert_eq!(reply.token_logprobs.unwrap()[0].logprob, -0.01);
    }

    #[test]
    fn rejects_payload_without_choices() {
        assert!(HttpTransport::decode(r#"{"choices":[]}"#).is_err());
        assert!(HttpTransport::decode("<html>").is_err());
    }
}
