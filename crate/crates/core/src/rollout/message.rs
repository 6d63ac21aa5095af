use serde::{Deserialize, Serialize};

use crate::env::{Database, ToolCall, ToolResult};
use crate::grpo::TokenRecord;

/// Literal sentinel that ends an episode successfully.
pub const STOP_SENTINEL: &str = "###STOP###";
/// Literal sentinel that ends an episode with a hand-off to a human.
pub const TRANSFER_SENTINEL: &str = "###TRANSFER###";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    AgentText,
    ToolCall,
    ToolResult,
}

impl Role {
    /// Roles whose tokens the agent policy generated (and which train).
    pub fn is_agent(self) -> bool {
        matches!(self, Role::AgentText | Role::ToolCall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", content = "content", rename_all = "snake_case")]
pub enum Body {
    System(String),
    User(String),
    AgentText(String),
    ToolCall(ToolCall),
    ToolResult(ToolResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    #[serde(flatten)]
    pub body: Body,
    #[serde(rename = "turn")]
    pub turn_index: usize,
    #[serde(rename = "tokens")]
    pub token_count: usize,
}

impl Message {
    pub fn new(body: Body, turn_index: usize, token_count: usize) -> Self {
        Self {
            body,
            turn_index,
            token_count,
        }
    }

    pub fn role(&self) -> Role {
        match self.body {
            Body::System(_) => Role::System,
            Body::User(_) => Role::User,
            Body::AgentText(_) => Role::AgentText,
            Body::ToolCall(_) => Role::ToolCall,
            Body::ToolResult(_) => Role::ToolResult,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.body {
            Body::System(t) | Body::User(t) | Body::AgentText(t) => Some(t),
            _ => None,
        }
    }

    pub fn tool_call(&self) -> Option<&ToolCall> {
        match &self.body {
            Body::ToolCall(c) => Some(c),
            _ => None,
        }
    }

    pub fn tool_result(&self) -> Option<&ToolResult> {
        match &self.body {
            Body::ToolResult(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stop,
    Transfer,
    TurnCap,
    TokenCap,
    ProtocolError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Continue,
    Stop,
    Transfer,
}

/// Sentinel check for user and agent text. If both sentinels occur, the
/// earlier one wins.
pub fn detect_termination(msg: &Message) -> Signal {
    msg.text().map(detect_in_text).unwrap_or(Signal::Continue)
}

pub fn detect_in_text(text: &str) -> Signal {
    match (text.find(STOP_SENTINEL), text.find(TRANSFER_SENTINEL)) {
        (Some(s), Some(t)) if t < s => Signal::Transfer,
        (Some(_), _) => Signal::Stop,
        (None, Some(_)) => Signal::Transfer,
        (None, None) => Signal::Continue,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub messages: Vec<Message>,
    pub termination: Termination,
    /// Database at termination. Absent for remote or simulated tool backends.
    #[serde(skip)]
    pub final_db: Option<Database>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_db_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_records: Vec<TokenRecord>,
    /// Reason for a protocol-error termination.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            messages: Vec::new(),
            termination: Termination::Stop,
            final_db: None,
            final_db_hash: None,
            token_records: Vec::new(),
            error: None,
        }
    }

    /// Number of turns: one per agent step, and at least one once any
    /// message exists.
    pub fn num_turns(&self) -> usize {
        self.messages.last().map_or(0, |m| m.turn_index + 1)
    }

    pub fn total_tokens(&self) -> usize {
        self.messages.iter().map(|m| m.token_count).sum()
    }

    /// Tokens the agent generated.
    pub fn agent_tokens(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role().is_agent())
            .map(|m| m.token_count)
            .sum()
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.messages.iter().filter_map(Message::tool_call)
    }

    /// Each tool call paired with the result that immediately follows it.
    pub fn tool_exchanges(&self) -> impl Iterator<Item = (&ToolCall, &ToolResult)> {
        self.messages
            .windows(2)
            .filter_map(|w| match (&w[0].body, &w[1].body) {
                (Body::ToolCall(c), Body::ToolResult(r)) => Some((c, r)),
                _ => None,
            })
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.messages.iter().filter(|m| m.role() == role).count()
    }

    /// Action ids of agent-generated tokens, in order.
    pub fn agent_action_ids(&self) -> Vec<usize> {
        self.token_records
            .iter()
            .filter(|r| r.mask)
            .map(|r| r.action_id)
            .collect()
    }
}
