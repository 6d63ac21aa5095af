//! Transport for the model-backed roles and their offline stand-ins.
//!
//! One chat-completions protocol serves every role (agent, user simulator,
//! tool simulator, judge); only the prompts differ. [`MockServer`] provides a
//! loopback endpoint so everything above this layer is testable offline.

mod executor;
mod http;
mod mock;
mod roles;
mod transcript;
mod wire;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use executor::{executor_server, mock_executor, replay_executor, RemoteToolExecutor};
pub use http::ChatClient;
pub use mock::{MockReply, MockServer, Recording};
pub use roles::{LlmAgent, LlmUser, PromptTemplate, ScriptedUser, SentinelPolicy, USER_PROMPT_TEMPLATE};
pub use transcript::{chat_transcript, transcript_from_chat};
pub use wire::{
    text_body, tool_calls_body, validate_tool_calls, ChatMessage, ChatRequest, ChatResponse, ChatRole, Usage,
    UsageWire, WireChoice, WireFunction, WireResponse, WireToolCall,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("environment variable {0} with the API key is not set")]
    MissingKey(String),
    #[error("authentication failed (HTTP {0})")]
    Auth(u16),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid client configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key; `None` for
    /// endpoints without authentication.
    pub api_key_env: Option<String>,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    /// Delay before retry `k` is `backoff[min(k, len − 1)]`.
    #[serde(with = "millis_list")]
    pub backoff: Vec<Duration>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            api_key_env: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(2),
                Duration::from_secs(8),
            ],
        }
    }
}

impl ClientConfig {
    /// Loopback configuration with no auth and fast retries, for mocks.
    pub fn local(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: None,
            timeout: Duration::from_secs(5),
            max_retries: 2,
            backoff: vec![Duration::from_millis(1)],
        }
    }
}

/// An API key that never prints itself.
#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn from_env(var: &str) -> Result<Self, ClientError> {
        match std::env::var(var) {
            Ok(k) if !k.is_empty() => Ok(Self(k)),
            _ => Err(ClientError::MissingKey(var.to_string())),
        }
    }

    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

mod millis_list {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &[Duration], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(d.iter().map(|x| x.as_millis() as u64))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Duration>, D::Error> {
        Ok(Vec::<u64>::deserialize(d)?
            .into_iter()
            .map(Duration::from_millis)
            .collect())
    }
}
