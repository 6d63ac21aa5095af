//! Chat-completions wire format (request, response, function calling).
//!
//! Response parsing keeps unrecognized fields in `extra` maps so a parsed
//! body serializes back to the same JSON value.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ClientError;
use crate::env::ToolCall;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFunction {
    pub name: String,
    /// JSON-encoded argument object.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToolCall {
    pub id: String,
    #[serde(rename = "type", default = "function_kind")]
    pub kind: String,
    pub function: WireFunction,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn function_kind() -> String {
    "function".into()
}

impl WireToolCall {
    pub fn from_call(id: impl Into<String>, call: &ToolCall) -> Self {
        Self {
            id: id.into(),
            kind: function_kind(),
            function: WireFunction {
                name: call.name.clone(),
                arguments: call.arguments.to_string(),
            },
            extra: Map::new(),
        }
    }

    /// Decodes the argument string into a [`ToolCall`].
    pub fn to_call(&self) -> Result<ToolCall, ClientError> {
        let raw = self.function.arguments.trim();
        let arguments = if raw.is_empty() {
            Value::Object(Map::new())
        } else {
            serde_json::from_str(raw).map_err(|e| {
                ClientError::Malformed(format!("arguments of {} are not JSON: {e}", self.function.name))
            })?
        };
        Ok(ToolCall::new(self.function.name.clone(), arguments))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<WireToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self {
            role,
            content: Some(content.into()),
            tool_calls: None,
            tool_call_id: None,
            extra: Map::new(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(ChatRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Assistant, content)
    }

    pub fn assistant_calls(calls: Vec<WireToolCall>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: None,
            tool_calls: Some(calls),
            tool_call_id: None,
            extra: Map::new(),
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::new(ChatRole::Tool, content)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<Value>>,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ChatRequest {
    /// Rejects two assistant messages in a row with nothing in between.
    pub fn validate(&self) -> Result<(), ClientError> {
        for (i, w) in self.messages.windows(2).enumerate() {
            if w[0].role == ChatRole::Assistant && w[1].role == ChatRole::Assistant {
                return Err(ClientError::InvalidRequest(format!(
                    "messages {i} and {} are consecutive assistant turns",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: usize,
    #[serde(default)]
    pub completion_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireChoice {
    #[serde(default)]
    pub index: usize,
    pub message: ChatMessage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Value>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A complete chat-completions response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub choices: Vec<WireChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageWire>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Usage block with any provider-specific counters preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageWire {
    #[serde(default)]
    pub prompt_tokens: usize,
    #[serde(default)]
    pub completion_tokens: usize,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// The parts of a response the roles act on.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub content: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    pub usage: Usage,
    pub logprobs: Option<Vec<f64>>,
}

impl WireResponse {
    pub fn parse(body: &str) -> Result<Self, ClientError> {
        serde_json::from_str(body).map_err(|e| ClientError::Malformed(e.to_string()))
    }

    pub fn to_response(&self) -> Result<ChatResponse, ClientError> {
        let choice = self
            .choices
            .first()
            .ok_or_else(|| ClientError::Malformed("response has no choices".into()))?;
        let tool_calls = choice
            .message
            .tool_calls
            .iter()
            .flatten()
            .map(WireToolCall::to_call)
            .collect::<Result<Vec<_>, _>>()?;
        let content = choice.message.content.clone().filter(|c| !c.trim().is_empty());
        if content.is_none() && tool_calls.is_empty() {
            return Err(ClientError::Malformed(
                "message has neither content nor tool calls".into(),
            ));
        }
        let logprobs = choice
            .logprobs
            .as_ref()
            .and_then(|l| l.get("content"))
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter_map(|t| t.get("logprob").and_then(Value::as_f64))
                    .collect()
            });
        Ok(ChatResponse {
            content,
            tool_calls,
            usage: self
                .usage
                .as_ref()
                .map(|u| Usage {
                    prompt_tokens: u.prompt_tokens,
                    completion_tokens: u.completion_tokens,
                })
                .unwrap_or_default(),
            logprobs,
        })
    }

    /// A minimal well-formed body carrying `message`.
    pub fn from_message(message: ChatMessage, usage: Usage) -> Self {
        Self {
            choices: vec![WireChoice {
                index: 0,
                message,
                logprobs: None,
                extra: Map::new(),
            }],
            usage: Some(UsageWire {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
                extra: Map::new(),
            }),
            extra: Map::new(),
        }
    }
}

/// Canned assistant-text body.
pub fn text_body(content: &str) -> Value {
    serde_json::to_value(WireResponse::from_message(
        ChatMessage::assistant(content),
        Usage {
            prompt_tokens: 0,
            completion_tokens: crate::rollout::approx_tokens(content),
        },
    ))
    .expect("serializable")
}

/// Canned tool-call body; call ids are `call_0`, `call_1`, ...
pub fn tool_calls_body(calls: &[ToolCall]) -> Value {
    let wire = calls
        .iter()
        .enumerate()
        .map(|(i, c)| WireToolCall::from_call(format!("call_{i}"), c))
        .collect();
    let tokens = calls
        .iter()
        .map(|c| crate::rollout::approx_tokens(&c.arguments.to_string()))
        .sum();
    serde_json::to_value(WireResponse::from_message(
        ChatMessage::assistant_calls(wire),
        Usage {
            prompt_tokens: 0,
            completion_tokens: tokens,
        },
    ))
    .expect("serializable")
}

/// Checks each call against the `tools` function declarations of a request.
pub fn validate_tool_calls(tools: &[Value], calls: &[ToolCall]) -> Result<(), ClientError> {
    for call in calls {
        let decl = tools
            .iter()
            .find(|t| t.pointer("/function/name").and_then(Value::as_str) == Some(&call.name))
            .ok_or_else(|| ClientError::Malformed(format!("undeclared tool {}", call.name)))?;
        let schema = decl
            .pointer("/function/parameters")
            .cloned()
            .unwrap_or(Value::Null);
        let validator = jsonschema::validator_for(&schema)
            .map_err(|e| ClientError::InvalidRequest(format!("schema of {}: {e}", call.name)))?;
        validator
            .validate(&call.arguments)
            .map_err(|e| ClientError::Malformed(format!("arguments of {}: {e}", call.name)))?;
    }
    Ok(())
}
