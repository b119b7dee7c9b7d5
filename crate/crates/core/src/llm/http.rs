//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatRequest, LlmError, LlmProvider};

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL such as `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. Unset means no
    /// `Authorization` header, which suits local servers.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct HttpProvider {
    cfg: HttpConfig,
    endpoint: String,
    api_key: Option<String>,
    client: Client,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Failure {
    Retryable(String),
    Fatal(LlmError),
}

impl HttpProvider {
    pub fn new(cfg: HttpConfig) -> Result<Self, LlmError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty());
        if api_key.is_none() {
            log::warn!(
                "{} is not set; requests to {} go out without authorization",
                cfg.api_key_env,
                cfg.base_url
            );
        }
        Ok(Self {
            endpoint: cfg.endpoint(),
            cfg,
            api_key,
            client,
        })
    }

    fn attempt(&self, req: &ChatRequest) -> Result<String, Failure> {
        let body = json!({
            "model": self.cfg.model,
            "messages": req.messages,
            "temperature": req.temperature,
        });
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            let body = resp.text().unwrap_or_default();
            return Err(Failure::Retryable(format!("HTTP {status}: {body}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Failure::Fatal(LlmError::Status {
                status: status.as_u16(),
                body,
            }));
        }
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| Failure::Fatal(LlmError::InvalidResponse(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Failure::Fatal(LlmError::InvalidResponse("no choices returned".into())))
    }
}

impl LlmProvider for HttpProvider {
    fn send(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(req) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) => {
                    if attempts > self.cfg.max_retries {
                        return Err(LlmError::Transport { attempts, message });
                    }
                    let delay = self.cfg.retry_backoff_ms.saturating_mul(1 << (attempts - 1).min(6));
                    log::info!("retrying after {message} (attempt {attempts}, waiting {delay} ms)");
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_normalization() {
        assert_eq!(
            HttpConfig::new("https://api.openai.com/v1/", "m").endpoint(),
            "https://api.openai.com/v1/chat/completions"
        );
        assert_eq!(
            HttpConfig::new("http://h/v1/chat/completions", "m").endpoint(),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn config_defaults() {
        let cfg: HttpConfig =
            serde_json::from_str(r#"{"base_url":"http://x","model":"gpt-4o"}"#).unwrap();
        assert_eq!(cfg.api_key_env, "OPENAI_API_KEY");
        assert_eq!(cfg.max_retries, 3);
    }
}
