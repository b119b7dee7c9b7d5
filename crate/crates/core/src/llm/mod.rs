//! Language-model access: providers, prompt templates, SQL extraction and
//! call accounting.

mod extract;
mod http;
mod prompt;
mod scripted;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ledger::{CallLedger, Purpose};

pub use extract::{extract_sql, ExtractError};
pub use http::{HttpConfig, HttpProvider};
pub use prompt::{
    evidence_section, render_prompt, Bindings, PromptError, PromptSet, PromptTemplate,
    TemplateName, PLACEHOLDERS,
};
pub use scripted::{
    RecordingProvider, ReplayEntry, ReplayProvider, ScriptStep, ScriptedProvider,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model: String,
    pub purpose: Purpose,
}

impl ChatRequest {
    /// Stable digest of the parts of a request that determine the answer:
    /// purpose, temperature and messages. The model name is left out so a
    /// session recorded against one endpoint replays under any binding.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            purpose: Purpose,
            temperature: f64,
            messages: &'a [ChatMessage],
        }
        let bytes = serde_json::to_vec(&View {
            purpose: self.purpose,
            temperature: self.temperature,
            messages: &self.messages,
        })
        .expect("request digest view serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Concatenated content of all user messages.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    InvalidResponse(String),
    #[error("scripted transcript exhausted after {consumed} response(s)")]
    ScriptExhausted { consumed: usize },
    #[error("scripted step {index} does not match the request: expected {expected}")]
    ScriptMismatch { index: usize, expected: String },
    #[error("replay divergence: no unused recording matches request digest {digest} ({remaining} unused)")]
    ReplayDivergence { digest: String, remaining: usize },
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("session file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A source of chat completions.
pub trait LlmProvider: Send + Sync {
    /// Sends one logical request. Transport retries happen inside.
    fn send(&self, req: &ChatRequest) -> Result<String, LlmError>;

    fn name(&self) -> &str;
}

/// One logical LLM call: exactly one ledger increment under `req.purpose`,
/// whether or not the provider succeeds.
pub fn complete(
    provider: &dyn LlmProvider,
    req: &ChatRequest,
    ledger: &CallLedger,
) -> Result<String, LlmError> {
    ledger.record(req.purpose);
    let out = provider.send(req);
    match &out {
        Ok(text) => log::debug!("{} call answered with {} bytes", req.purpose, text.len()),
        Err(e) => log::warn!("{} call failed: {e}", req.purpose),
    }
    out
}

fn default_model() -> String {
    "gpt-4o".to_string()
}

/// A provider together with the model name and templates it is prompted with.
#[derive(Clone)]
pub struct LlmClient {
    pub provider: Arc<dyn LlmProvider>,
    pub model: String,
    pub prompts: PromptSet,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn LlmProvider>, model: impl Into<String>) -> Self {
        Self {
            provider,
            model: model.into(),
            prompts: PromptSet::default(),
        }
    }

    pub fn from_binding(binding: &ProviderBinding) -> Result<Self, LlmError> {
        Ok(Self::new(binding.build()?, binding.model()))
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn render(
        &self,
        template: TemplateName,
        bindings: &Bindings,
        temperature: f64,
    ) -> Result<ChatRequest, PromptError> {
        render_prompt(self.prompts.get(template), bindings, temperature, &self.model)
    }

    pub fn complete(&self, req: &ChatRequest, ledger: &CallLedger) -> Result<String, LlmError> {
        complete(self.provider.as_ref(), req, ledger)
    }
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("provider", &self.provider.name())
            .field("model", &self.model)
            .finish()
    }
}

/// Provider settings as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderBinding {
    /// OpenAI-compatible chat-completions endpoint.
    Http(HttpConfig),
    /// Canned responses consumed in order.
    Scripted {
        #[serde(default)]
        transcript: Vec<ScriptStep>,
        /// JSON array of steps, appended after `transcript`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transcript_file: Option<PathBuf>,
        #[serde(default = "default_model")]
        model: String,
    },
    /// Responses looked up in a recorded session by request digest.
    Replay {
        session_file: PathBuf,
        #[serde(default = "default_model")]
        model: String,
    },
    /// Wraps another binding and records every answered request.
    Record {
        inner: Box<ProviderBinding>,
        session_file: PathBuf,
    },
}

impl ProviderBinding {
    pub fn scripted(transcript: Vec<ScriptStep>) -> Self {
        ProviderBinding::Scripted {
            transcript,
            transcript_file: None,
            model: default_model(),
        }
    }

    pub fn model(&self) -> &str {
        match self {
            ProviderBinding::Http(cfg) => &cfg.model,
            ProviderBinding::Scripted { model, .. } | ProviderBinding::Replay { model, .. } => model,
            ProviderBinding::Record { inner, .. } => inner.model(),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn LlmProvider>, LlmError> {
        Ok(match self {
            ProviderBinding::Http(cfg) => Arc::new(HttpProvider::new(cfg.clone())?),
            ProviderBinding::Scripted {
                transcript,
                transcript_file,
                ..
            } => {
                let mut steps = transcript.clone();
                if let Some(path) = transcript_file {
                    steps.extend(scripted::load_steps(path)?);
                }
                Arc::new(ScriptedProvider::new(steps))
            }
            ProviderBinding::Replay { session_file, .. } => {
                Arc::new(ReplayProvider::from_file(session_file)?)
            }
            ProviderBinding::Record {
                inner,
                session_file,
            } => Arc::new(RecordingProvider::to_file(inner.build()?, session_file.clone())),
        })
    }
}
