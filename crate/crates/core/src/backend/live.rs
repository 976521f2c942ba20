//! OpenAI-style `/chat/completions` client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Role, TokenUsage};

pub const ENV_ENDPOINT: &str = "VIDAGENT_ENDPOINT";
pub const ENV_API_KEY: &str = "VIDAGENT_API_KEY";
pub const ENV_MODEL: &str = "VIDAGENT_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "gpt-3.5-turbo".into(),
            timeout_secs: 60,
            max_retries: 2,
            retry_backoff_ms: 1000,
        }
    }
}

impl LiveConfig {
    /// Fill fields that are still unset or default from the environment.
    /// Environment never overrides a value that came from a file or flag.
    pub fn fill_from_env(&mut self) {
        let defaults = LiveConfig::default();
        if self.api_key.is_none() {
            self.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        }
        if self.endpoint == defaults.endpoint {
            if let Ok(v) = std::env::var(ENV_ENDPOINT) {
                if !v.is_empty() {
                    self.endpoint = v;
                }
            }
        }
        if self.model == defaults.model {
            if let Ok(v) = std::env::var(ENV_MODEL) {
                if !v.is_empty() {
                    self.model = v;
                }
            }
        }
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
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

enum Attempt {
    Retryable(String),
    Fatal(BackendError),
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        if config.endpoint.trim().is_empty() {
            return Err(BackendError::Config("empty endpoint".into()));
        }
        if config.model.trim().is_empty() {
            return Err(BackendError::Config("empty model name".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = Vec::with_capacity(request.turns.len() + 1);
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        for turn in &request.turns {
            let role = match turn.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": turn.text}));
        }
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<(String, TokenUsage), Attempt> {
        let mut builder = self.client.post(self.config.url()).json(body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retryable(e.to_string()))?;
        if !status.is_success() {
            return Err(Attempt::Fatal(BackendError::Provider {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
            Attempt::Fatal(BackendError::Provider {
                status: status.as_u16(),
                body: format!("unparseable response ({e}): {text}"),
            })
        })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                Attempt::Fatal(BackendError::Provider {
                    status: status.as_u16(),
                    body: "response has no choices".into(),
                })
            })?;
        let usage = parsed.usage.unwrap_or_default();
        Ok((
            content,
            TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
        ))
    }
}

fn strip_trailing_stop(mut text: String, stops: &[String]) -> String {
    for stop in stops {
        if text.ends_with(stop.as_str()) {
            text.truncate(text.len() - stop.len());
            break;
        }
    }
    text
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = self.body(request);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.retry_backoff_ms));
            }
            match self.attempt(&body) {
                Ok((text, token_usage)) => {
                    return Ok(ChatResponse {
                        text: strip_trailing_stop(text, &request.stop_sequences),
                        token_usage,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) => {
                    warn!(attempt, error = %msg, "chat completion transport error");
                    last = msg;
                }
            }
        }
        Err(BackendError::Transport(last))
    }
}
