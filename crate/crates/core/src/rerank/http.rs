//! OpenAI-compatible chat-completions client.
//!
//! POSTs `{model, messages, temperature}` to `<base_url>/v1/chat/completions`
//! with a bearer token taken from an environment variable, and returns the
//! first choice's message content verbatim.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use ureq::Agent;

use crate::error::{Error, Result};
use crate::rerank::client::{ChatClient, EvalContext};
use crate::rerank::prompt::ChatMessagePair;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    /// Scheme + host (+ optional port); the path is fixed.
    pub base_url: String,
    pub model: String,
    /// Sampling temperature; 0 keeps replays deterministic.
    pub temperature: f64,
    pub timeout_ms: u64,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            base_url: "https://api.openai.com".to_string(),
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            timeout_ms: 30_000,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
        }
    }
}

pub struct HttpChatClient {
    cfg: HttpClientConfig,
    api_key: String,
    agent: Agent,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl HttpChatClient {
    /// Reads the bearer token from the configured environment variable.
    pub fn from_env(cfg: HttpClientConfig) -> Result<Self> {
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            Error::Config(format!(
                "environment variable {} is not set",
                cfg.api_key_env
            ))
        })?;
        Ok(Self::with_key(cfg, api_key))
    }

    pub fn with_key(cfg: HttpClientConfig, api_key: String) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient {
            cfg,
            api_key,
            agent,
        }
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.cfg.base_url.trim_end_matches('/')
        )
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &ChatMessagePair, _ctx: &EvalContext<'_>) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": messages.system},
                {"role": "user", "content": messages.user},
            ],
            "temperature": self.cfg.temperature,
        });
        let mut response = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| Error::Transport(format!("chat completion request failed: {e}")))?;

        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let text = response
                .body_mut()
                .read_to_string()
                .unwrap_or_else(|_| "<unreadable body>".to_string());
            return Err(Error::Protocol {
                status,
                message: text.chars().take(500).collect(),
            });
        }
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("malformed chat completion response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("response contained no choices".to_string()))
    }

    fn name(&self) -> &'static str {
        "http"
    }
}
