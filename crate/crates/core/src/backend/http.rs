//! HTTP backend for OpenAI-compatible chat/completions services.
//!
//! Requests always set the flag asking the service for per-token
//! log-probabilities; the reply's logprob fields are converted to plain
//! probabilities with `exp` at this boundary. Both the chat-style
//! `logprobs.content[].logprob` shape and the legacy
//! `logprobs.token_logprobs` shape are understood.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use serde_json::json;

use crate::backend::{approx_token_count, GenerationParams, ModelBackend, ModelOutput};
use crate::error::BackendError;

/// Connection settings; `api_key` is optional for local servers.
#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Declare false for services that cannot return log-probabilities.
    pub expects_probabilities: bool,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            expects_probabilities: true,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    message: Option<Message>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: String,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
    #[serde(default)]
    token_logprobs: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    fn request_once(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<reqwest::blocking::Response, reqwest::Error> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": params.max_new_tokens,
            "temperature": params.temperature,
            "logprobs": true,
        });
        if !params.stop_sequences.is_empty() {
            body["stop"] = json!(params.stop_sequences);
        }
        let mut request = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        request.send()
    }
}

/// `exp` of a reported logprob, kept inside (0, 1].
fn logprob_to_prob(logprob: f64) -> f64 {
    logprob.exp().clamp(f64::MIN_POSITIVE, 1.0)
}

impl ModelBackend for HttpBackend {
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<ModelOutput, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let base_ms = 500u64 << (attempt - 1).min(4);
                let jitter = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| u64::from(d.subsec_nanos()) % 250)
                    .unwrap_or(0);
                std::thread::sleep(Duration::from_millis(base_ms + jitter));
            }
            match self.request_once(prompt, params) {
                Ok(response) => {
                    let status = response.status();
                    if status.is_server_error() || status.as_u16() == 429 {
                        last_error = format!("service returned {status}");
                        continue;
                    }
                    if !status.is_success() {
                        let body = response.text().unwrap_or_default();
                        return Err(BackendError::MalformedResponse(format!(
                            "status {status}: {body}"
                        )));
                    }
                    // A parsed success returns immediately; retries only
                    // happen before this point, so one call yields at most
                    // one completion.
                    return parse_response(response, prompt, self.config.expects_probabilities);
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
        }
        Err(BackendError::Transport {
            attempts,
            message: last_error,
        })
    }

    fn reports_probabilities(&self) -> bool {
        self.config.expects_probabilities
    }
}

fn parse_response(
    response: reqwest::blocking::Response,
    prompt: &str,
    expects_probabilities: bool,
) -> Result<ModelOutput, BackendError> {
    let parsed: ChatResponse = response
        .json()
        .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
    let text = match (choice.message, choice.text) {
        (Some(message), _) => message.content,
        (None, Some(text)) => text,
        (None, None) => {
            return Err(BackendError::MalformedResponse(
                "choice carries neither message nor text".into(),
            ))
        }
    };
    let token_probs: Vec<f64> = match choice.logprobs {
        Some(Logprobs {
            content: Some(items),
            ..
        }) => items.iter().map(|t| logprob_to_prob(t.logprob)).collect(),
        Some(Logprobs {
            token_logprobs: Some(items),
            ..
        }) => items
            .iter()
            .filter_map(|l| l.map(logprob_to_prob))
            .collect(),
        _ => Vec::new(),
    };
    if token_probs.is_empty() && expects_probabilities {
        return Err(BackendError::MalformedResponse(
            "response carries no log-probabilities; declare the backend prob-less to allow this"
                .into(),
        ));
    }
    let (prompt_tokens, completion_tokens) = match parsed.usage {
        Some(usage) => (usage.prompt_tokens, usage.completion_tokens),
        None => (
            approx_token_count(prompt),
            if token_probs.is_empty() {
                approx_token_count(&text)
            } else {
                token_probs.len() as u64
            },
        ),
    };
    Ok(ModelOutput {
        text,
        token_probs,
        prompt_tokens,
        completion_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Serve canned HTTP responses, one per expected request.
    fn serve_http(responses: Vec<(u16, String)>) -> (std::thread::JoinHandle<()>, String) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 65536];
                let _ = stream.read(&mut buf).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (handle, addr)
    }

    /// Response shape recorded from a chat/completions service with
    /// logprobs enabled.
    const FIXTURE: &str = r#"{
        "id": "chatcmpl-fixture",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": "take knife 1"},
            "logprobs": {"content": [
                {"token": "take", "logprob": -0.10536051565782628},
                {"token": " knife", "logprob": -0.2231435513142097},
                {"token": " 1", "logprob": 0.0}
            ]},
            "finish_reason": "stop"
        }],
        "usage": {"prompt_tokens": 42, "completion_tokens": 3}
    }"#;

    #[test]
    fn parses_text_and_exp_logprobs_from_fixture() {
        let (handle, addr) = serve_http(vec![(200, FIXTURE.to_string())]);
        let mut config = HttpBackendConfig::new(format!("http://{addr}/v1"), "test-model");
        config.max_retries = 0;
        config.timeout = Duration::from_secs(5);
        let backend = HttpBackend::new(config).unwrap();
        let out = backend
            .complete("prompt", &GenerationParams::generator())
            .unwrap();
        assert_eq!(out.text, "take knife 1");
        // exp(-0.10536051565782628) = 0.9, exp(-0.2231435513142097) = 0.8.
        assert!((out.token_probs[0] - 0.9).abs() < 1e-12);
        assert!((out.token_probs[1] - 0.8).abs() < 1e-12);
        assert_eq!(out.token_probs[2], 1.0);
        assert_eq!(out.prompt_tokens, 42);
        assert_eq!(out.completion_tokens, 3);
        handle.join().unwrap();
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (handle, addr) = serve_http(vec![
            (500, "{}".to_string()),
            (200, FIXTURE.to_string()),
        ]);
        let mut config = HttpBackendConfig::new(format!("http://{addr}"), "m");
        config.max_retries = 2;
        config.timeout = Duration::from_secs(5);
        let backend = HttpBackend::new(config).unwrap();
        let out = backend
            .complete("prompt", &GenerationParams::generator())
            .unwrap();
        assert_eq!(out.text, "take knife 1");
        handle.join().unwrap();
    }

    #[test]
    fn transport_failure_reports_attempts() {
        // Nothing listens on this port.
        let mut config = HttpBackendConfig::new("http://127.0.0.1:1", "m");
        config.max_retries = 1;
        config.timeout = Duration::from_millis(200);
        let backend = HttpBackend::new(config).unwrap();
        let err = backend
            .complete("prompt", &GenerationParams::generator())
            .unwrap_err();
        match err {
            BackendError::Transport { attempts, .. } => assert_eq!(attempts, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_logprobs_is_malformed_unless_declared() {
        let body = r#"{"choices": [{"message": {"content": "hi"}}]}"#;
        let (handle, addr) = serve_http(vec![(200, body.to_string())]);
        let mut config = HttpBackendConfig::new(format!("http://{addr}"), "m");
        config.max_retries = 0;
        config.timeout = Duration::from_secs(5);
        let backend = HttpBackend::new(config).unwrap();
        let err = backend
            .complete("prompt", &GenerationParams::generator())
            .unwrap_err();
        assert!(matches!(err, BackendError::MalformedResponse(_)));
        handle.join().unwrap();

        let (handle, addr) = serve_http(vec![(200, body.to_string())]);
        let mut config = HttpBackendConfig::new(format!("http://{addr}"), "m");
        config.max_retries = 0;
        config.timeout = Duration::from_secs(5);
        config.expects_probabilities = false;
        let backend = HttpBackend::new(config).unwrap();
        let out = backend
            .complete("prompt", &GenerationParams::generator())
            .unwrap();
        assert_eq!(out.text, "hi");
        assert!(out.token_probs.is_empty());
        handle.join().unwrap();
    }

    #[test]
    fn exp_conversion_stays_in_unit_interval() {
        assert_eq!(logprob_to_prob(0.0), 1.0);
        assert!(logprob_to_prob(-1e9) > 0.0);
        assert_eq!(logprob_to_prob(0.5), 1.0);
        let p = logprob_to_prob(-0.5);
        assert!(p > 0.0 && p < 1.0);
    }
}
