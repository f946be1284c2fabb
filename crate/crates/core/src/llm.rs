//! Minimal chat-completion client, used only for free-form VQA generation.
//!
//! Requests follow the common `{model, messages: [{role, content}]}` shape and
//! go to `{base_url}/chat/completions` with a bearer token read from an
//! environment variable. The token is never logged.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("environment variable {0} is not set")]
    AuthMissing(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {0}")]
    HttpStatus(u16),
    #[error("rate limited after {0} attempts")]
    RateLimited(usize),
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    InvalidResponse(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
}

/// Anything that can answer a system + user prompt pair.
pub trait ChatClient {
    fn chat(&self, system: &str, user: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the variable holding the API key, not the key itself.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_base_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_secs == 0 {
            return Err(LlmError::InvalidConfig("timeout_secs must be positive".into()));
        }
        if self.base_url.is_empty() || self.model.is_empty() || self.api_key_env.is_empty() {
            return Err(LlmError::InvalidConfig("base_url, model and api_key_env are required".into()));
        }
        Ok(())
    }

    pub fn endpoint_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

pub struct LlmClient {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Done(String),
    Retry(LlmError),
    Fail(LlmError),
}

impl LlmClient {
    pub fn new(config: EndpointConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(LlmClient { config, http })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn attempt(&self, key: &str, body: &Value) -> Attempt {
        let resp = self.http.post(self.config.endpoint_url()).bearer_auth(key).json(body).send();
        let resp = match resp {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout),
            Err(e) if e.is_connect() => return Attempt::Retry(LlmError::Transport(e.without_url().to_string())),
            Err(e) => return Attempt::Fail(LlmError::Transport(e.without_url().to_string())),
        };
        let status = resp.status();
        if status.as_u16() == 429 {
            return Attempt::Retry(LlmError::RateLimited(0));
        }
        if status.is_server_error() {
            return Attempt::Retry(LlmError::HttpStatus(status.as_u16()));
        }
        if !status.is_success() {
            return Attempt::Fail(LlmError::HttpStatus(status.as_u16()));
        }
        let value: Value = match resp.json() {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout),
            Err(e) => return Attempt::Fail(LlmError::InvalidResponse(e.without_url().to_string())),
        };
        match value.pointer("/choices/0/message/content").and_then(Value::as_str) {
            Some(text) => Attempt::Done(text.to_string()),
            None => Attempt::Fail(LlmError::InvalidResponse("missing choices[0].message.content".into())),
        }
    }
}

impl ChatClient for LlmClient {
    /// At most `max_retries + 1` requests; retries 5xx, 429, timeouts and
    /// connection failures with exponential backoff.
    fn chat(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let key = std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::AuthMissing(self.config.api_key_env.clone()))?;
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let attempts = self.config.max_retries as usize + 1;
        let mut last = LlmError::Timeout;
        for n in 0..attempts {
            if n > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (n - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            log::debug!("chat request to {} (attempt {}/{attempts})", self.config.endpoint_url(), n + 1);
            match self.attempt(&key, &body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("transient chat failure: {e}");
                    last = e;
                }
            }
        }
        Err(match last {
            LlmError::RateLimited(_) => LlmError::RateLimited(attempts),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread;

    /// Serve one scripted response per connection; record request bodies.
    fn mock(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        thread::spawn(move || {
            for (status, body) in script {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(format!("{auth}\n{}", String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (url, seen)
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn config(url: String, env: &str) -> EndpointConfig {
        EndpointConfig {
            base_url: url,
            model: "mock".into(),
            api_key_env: env.into(),
            timeout_secs: 5,
            max_retries: 3,
            backoff_base_ms: 1,
        }
    }

    #[test]
    fn returns_assistant_text() {
        std::env::set_var("STCRAY_TEST_KEY_A", "sk-test");
        let (url, seen) = mock(vec![(200, ok_body("Human: hi\nAssistant: hello"))]);
        let client = LlmClient::new(config(url, "STCRAY_TEST_KEY_A")).unwrap();
        assert_eq!(client.chat("sys", "cap").unwrap(), "Human: hi\nAssistant: hello");
        let req = &seen.lock().unwrap()[0];
        assert!(req.starts_with("authorization: Bearer sk-test"));
        let body: Value = serde_json::from_str(req.split_once('\n').unwrap().1).unwrap();
        assert_eq!(body["messages"][0]["content"], "sys");
        assert_eq!(body["model"], "mock");
    }

    #[test]
    fn retries_server_errors() {
        std::env::set_var("STCRAY_TEST_KEY_B", "k");
        let (url, seen) = mock(vec![(500, "{}".into()), (500, "{}".into()), (200, ok_body("done"))]);
        let client = LlmClient::new(config(url, "STCRAY_TEST_KEY_B")).unwrap();
        assert_eq!(client.chat("s", "u").unwrap(), "done");
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        std::env::set_var("STCRAY_TEST_KEY_C", "k");
        let (url, seen) = mock(vec![(429, "{}".into()); 3]);
        let mut cfg = config(url, "STCRAY_TEST_KEY_C");
        cfg.max_retries = 2;
        let client = LlmClient::new(cfg).unwrap();
        assert!(matches!(client.chat("s", "u"), Err(LlmError::RateLimited(3))));
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        std::env::set_var("STCRAY_TEST_KEY_D", "k");
        let (url, seen) = mock(vec![(401, "{}".into()), (200, ok_body("never"))]);
        let client = LlmClient::new(config(url, "STCRAY_TEST_KEY_D")).unwrap();
        assert!(matches!(client.chat("s", "u"), Err(LlmError::HttpStatus(401))));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn missing_key_makes_no_request() {
        let (url, seen) = mock(vec![(200, ok_body("x"))]);
        let client = LlmClient::new(config(url, "STCRAY_TEST_KEY_UNSET")).unwrap();
        assert!(matches!(client.chat("s", "u"), Err(LlmError::AuthMissing(v)) if v == "STCRAY_TEST_KEY_UNSET"));
        assert!(seen.lock().unwrap().is_empty());
    }

    #[test]
    fn rejects_zero_timeout() {
        let mut cfg = config("http://x".into(), "K");
        cfg.timeout_secs = 0;
        assert!(LlmClient::new(cfg).is_err());
    }
}
