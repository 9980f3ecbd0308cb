//! Minimal chat-completions client shared by the planner and the semantic
//! selector.
//!
//! Wire format: `POST <endpoint>` with
//! `{"model": ..., "messages": [{"role": ..., "content": ...}], "temperature": 0}`;
//! the reply text is read from `choices[0].message.content`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "TWIN_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "TWIN_LLM_MODEL";
pub const ENV_API_KEY: &str = "TWIN_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("chat endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("chat endpoint returned an unusable response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl EndpointConfig {
    pub const DEFAULT_MODEL: &'static str = "gpt-4o-mini";

    /// Reads `TWIN_LLM_ENDPOINT`, `TWIN_LLM_MODEL` and `TWIN_LLM_API_KEY`.
    /// Returns `None` when no endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_ENDPOINT).ok().filter(|u| !u.is_empty())?;
        Some(EndpointConfig {
            url,
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| Self::DEFAULT_MODEL.into()),
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
        })
    }
}

/// Blocking HTTP transport.
pub struct HttpChat {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(config: EndpointConfig) -> Result<Self, ChatError> {
        let uri: ureq::http::Uri = config
            .url
            .parse()
            .map_err(|e| ChatError::Unreachable(format!("malformed endpoint URL `{}`: {e}", config.url)))?;
        if !matches!(uri.scheme_str(), Some("http" | "https")) || uri.host().is_none() {
            return Err(ChatError::Unreachable(format!(
                "malformed endpoint URL `{}`: expected http(s)://host/...",
                config.url
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(HttpChat { config, agent })
    }
}

impl ChatTransport for HttpChat {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": 0,
        });
        let mut req = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| ChatError::Unreachable(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ChatError::BadResponse(e.to_string()))?;
        if !status.is_success() {
            return Err(ChatError::Unreachable(format!("HTTP {status}: {text}")));
        }
        extract_content(&text)
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions reply.
pub fn extract_content(body: &str) -> Result<String, ChatError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ChatError::BadResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| ChatError::BadResponse("missing choices[0].message.content".into()))
}

/// Returns the first balanced JSON object or array in `text`, skipping any
/// prose or code fences a model wraps around it.
pub fn extract_json_block(text: &str, open: char) -> Option<&str> {
    let close = if open == '{' { '}' } else { ']' };
    let start = text.find(open)?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            c if c == open => depth += 1,
            c if c == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use std::sync::Mutex;

    /// Replays canned replies in order and records every request.
    pub struct ScriptedChat {
        replies: Mutex<Vec<Result<String, ChatError>>>,
        pub requests: Mutex<Vec<Vec<ChatMessage>>>,
    }

    impl ScriptedChat {
        pub fn new(replies: Vec<Result<String, ChatError>>) -> Self {
            ScriptedChat {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                requests: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatTransport for ScriptedChat {
        fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
            self.requests.lock().unwrap().push(messages.to_vec());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(ChatError::BadResponse("script exhausted".into())))
        }
    }
}
