//! HTTP chat-completion backend following the common wire convention:
//! a `messages` array in, choice text plus usage counts out.

use serde::{Deserialize, Serialize};

use crate::provider::{
    BackendError, CallContext, ChatBackend, ChatTranscript, CompletionParams, CompletionResult,
};

/// Environment variable holding the bearer credential for live endpoints.
pub const API_KEY_ENV: &str = "DUPDEBATE_API_KEY";

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

/// Chat endpoint client. The credential is read from [`API_KEY_ENV`] when
/// present; endpoints without auth work without it.
pub struct HttpBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            url: url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            agent: ureq::AgentBuilder::new()
                .timeout(std::time::Duration::from_secs(120))
                .build(),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &CompletionParams,
        _ctx: &CallContext,
    ) -> Result<CompletionResult, BackendError> {
        let body = WireRequest {
            model: &self.model,
            messages: transcript
                .messages()
                .iter()
                .map(|m| WireMessage { role: role_str(m.role), content: &m.content })
                .collect(),
            temperature: params.temperature,
            max_tokens: params.max_reply_tokens,
            seed: params.seed,
        };
        let mut request = self.agent.post(&self.url).set("content-type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.set("authorization", &format!("Bearer {key}"));
        }
        let response = match request.send_json(&body) {
            Ok(response) => response,
            Err(ureq::Error::Status(code, response)) => {
                let detail = response.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", detail.trim());
                // Server-side and throttling failures are worth retrying.
                return if code >= 500 || code == 429 {
                    Err(BackendError::Transient(msg))
                } else {
                    Err(BackendError::Fatal(msg))
                };
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(BackendError::Transient(format!("transport: {t}")))
            }
        };
        let parsed: WireResponse = response
            .into_json()
            .map_err(|e| BackendError::Fatal(format!("malformed response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Fatal("response carries no choices".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(CompletionResult {
            text: choice.message.content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }

    fn id(&self) -> String {
        format!("http({} @ {})", self.model, self.url)
    }
}

fn role_str(role: crate::provider::Role) -> &'static str {
    match role {
        crate::provider::Role::System => "system",
        crate::provider::Role::User => "user",
        crate::provider::Role::Assistant => "assistant",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{Provider, RetryPolicy, Stage};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Minimal one-shot chat server: serves each canned (status, body) pair
    /// to consecutive connections, then stops.
    fn spawn_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen_bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(rest) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = rest.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut request_body = vec![0u8; content_length];
                reader.read_exact(&mut request_body).unwrap();
                seen_bodies.push(String::from_utf8(request_body).unwrap());
                let reason = if status == 200 { "OK" } else { "Error" };
                let reply = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                reader.into_inner().write_all(reply.as_bytes()).unwrap();
            }
            seen_bodies
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        })
        .to_string()
    }

    #[test]
    fn posts_wire_format_and_parses_reply_and_usage() {
        let (url, server) = spawn_server(vec![(200, ok_body("hello back"))]);
        let backend = HttpBackend::new(url, "test-model");
        let result = backend
            .complete(
                &ChatTranscript::from_user("hello"),
                &CompletionParams::default(),
                &CallContext::new(Stage::Debate, "t"),
            )
            .unwrap();
        assert_eq!(result.text, "hello back");
        assert_eq!(result.prompt_tokens, 12);
        assert_eq!(result.completion_tokens, 3);

        let bodies = server.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "hello");
        assert!(sent["temperature"].is_number());
    }

    #[test]
    fn server_errors_are_retried_by_the_provider() {
        let (url, server) = spawn_server(vec![
            (500, "{\"error\":\"overloaded\"}".to_string()),
            (200, ok_body("recovered")),
        ]);
        let provider = Provider::new(
            Arc::new(HttpBackend::new(url, "test-model")),
            RetryPolicy::immediate(3),
            2,
        );
        let result = provider
            .complete(
                &ChatTranscript::from_user("hi"),
                &CompletionParams::default(),
                &CallContext::new(Stage::Debate, "t"),
            )
            .unwrap();
        assert_eq!(result.text, "recovered");
        server.join().unwrap();
    }

    #[test]
    fn client_errors_are_fatal() {
        let (url, server) = spawn_server(vec![(401, "{\"error\":\"bad key\"}".to_string())]);
        let backend = HttpBackend::new(url, "m");
        let err = backend
            .complete(
                &ChatTranscript::from_user("hi"),
                &CompletionParams::default(),
                &CallContext::new(Stage::Debate, "t"),
            )
            .unwrap_err();
        assert!(matches!(err, BackendError::Fatal(_)));
        server.join().unwrap();
    }
}
