//! Chat-completion providers.
//!
//! Everything that talks to a language model goes through [`ChatBackend`].
//! Implementations: [`LiveBackend`] (OpenAI-style HTTP), [`ScriptedBackend`]
//! (FIFO of canned answers), [`FnBackend`] (rule-based, for fixtures), and
//! [`CassetteBackend`] (record/replay keyed by request fingerprint).

mod cassette;
mod live;
mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cassette::{fingerprint, record_replay, CassetteBackend, CassetteEntry, CassetteMode};
pub use live::{LiveBackend, LiveConfig};
pub use scripted::{FnBackend, ScriptedBackend};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("scripted backend has no answers left")]
    ScriptExhausted,
    #[error("no cassette entry for request fingerprint {fingerprint}")]
    CassetteMiss { fingerprint: String },
    #[error("corrupt cassette: {0}")]
    CorruptCassette(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub turns: Vec<Turn>,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
    pub max_tokens: u32,
}

pub const DEFAULT_MAX_TOKENS: u32 = 512;

impl ChatRequest {
    /// Single user turn, temperature 0, no stop sequences.
    pub fn new(system_prompt: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            turns: vec![Turn {
                role: Role::User,
                text: user.into(),
            }],
            temperature: 0.0,
            stop_sequences: Vec::new(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop_sequences.push(stop.into());
        self
    }

    pub fn push_turn(&mut self, role: Role, text: impl Into<String>) {
        self.turns.push(Turn {
            role,
            text: text.into(),
        });
    }

    /// Text of the last user turn, which is where prompts put the task.
    pub fn last_user_text(&self) -> &str {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
            .unwrap_or("")
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.turns.is_empty() {
            return Err(BackendError::InvalidRequest("no turns".into()));
        }
        if self.stop_sequences.iter().any(|s| s.is_empty()) {
            return Err(BackendError::InvalidRequest("empty stop sequence".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be > 0".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("negative temperature".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_usage: TokenUsage,
}

impl ChatResponse {
    /// Response with whitespace-token estimates for usage; used by offline backends.
    pub fn estimated(request: &ChatRequest, text: impl Into<String>) -> Self {
        let text = text.into();
        let prompt_tokens = std::iter::once(request.system_prompt.as_str())
            .chain(request.turns.iter().map(|t| t.text.as_str()))
            .map(|s| s.split_whitespace().count() as u64)
            .sum();
        let completion_tokens = text.split_whitespace().count() as u64;
        Self {
            text,
            token_usage: TokenUsage {
                prompt_tokens,
                completion_tokens,
            },
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Per-session wrapper that counts calls and accumulates token usage.
pub struct MeteredBackend<B> {
    inner: B,
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl<B: ChatBackend> MeteredBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
        }
    }

    pub fn usage(&self) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls.load(Ordering::SeqCst),
            prompt_tokens: self.prompt_tokens.load(Ordering::SeqCst),
            completion_tokens: self.completion_tokens.load(Ordering::SeqCst),
        }
    }
}

impl<B: ChatBackend> ChatBackend for MeteredBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompt_tokens
            .fetch_add(response.token_usage.prompt_tokens, Ordering::SeqCst);
        self.completion_tokens
            .fetch_add(response.token_usage.completion_tokens, Ordering::SeqCst);
        Ok(response)
    }
}
