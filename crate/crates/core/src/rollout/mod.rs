//! The agent–user–environment episode loop.
//!
//! [`run_rollout`] drives one episode: the user opens, then at every agent
//! step the policy either calls one or more tools (each executed at once and
//! answered in place) or writes one text message, which goes to the user whose
//! reply continues the dialogue. Episodes end on a sentinel, the turn cap, the
//! token cap, or a protocol violation.
//!
//! The text-only and tool-only paradigms are configurations of the same loop:
//! `user_mode = none` skips the user, `tool_execution = none` disables tools.

mod agents;
mod engine;
mod group;
mod message;
mod persist;
mod replay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Database, DomainEnv, SnapshotToken, Task, ToolCall, ToolResult, ToolSpec};
use crate::grpo::TokenRecord;

pub use agents::{FuzzAgent, ScriptStep, ScriptedAgent};
pub use engine::{approx_tokens, run_rollout, tag_tokens};
pub use group::{run_group, score_trajectory, Group, RolloutRoles};
pub use message::{
    detect_in_text, detect_termination, Body, Message, Role, Signal, Termination, Trajectory, STOP_SENTINEL,
    TRANSFER_SENTINEL,
};
pub use persist::{read_trajectories, write_trajectories, TrajectoryRecord};
pub use replay::{recorded_steps, replay_trajectory};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("invalid rollout configuration: {0}")]
    Config(String),
    #[error("token records do not line up with messages: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed trajectory line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// Failure of an agent or user role (transport, malformed output).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoleError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid output: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UserMode {
    Llm,
    #[default]
    Scripted,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ToolExecution {
    #[default]
    LocalEnv,
    RemoteExecutor,
    LlmSimulated,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Maximum number of agent steps per episode.
    pub max_turns: usize,
    /// Maximum total tokens over all messages.
    pub max_tokens: usize,
    pub group_size: usize,
    pub agent_temperature: f64,
    pub user_mode: UserMode,
    pub tool_execution: ToolExecution,
    /// Whether the user simulator also sees tool calls and results.
    pub user_sees_tool_results: bool,
    /// Run the rollouts of a group on separate threads.
    pub parallel: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_turns: 30,
            max_tokens: 32768,
            group_size: 8,
            agent_temperature: 1.0,
            user_mode: UserMode::default(),
            tool_execution: ToolExecution::default(),
            user_sees_tool_results: false,
            parallel: true,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.max_turns == 0 {
            return Err(RolloutError::Config("max_turns must be at least 1".into()));
        }
        if self.group_size == 0 {
            return Err(RolloutError::Config("group_size must be at least 1".into()));
        }
        if self.agent_temperature.is_nan() || self.agent_temperature < 0.0 {
            return Err(RolloutError::Config(
                "agent_temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// What the agent sees when asked for its next step.
pub struct AgentView<'a> {
    pub task: &'a Task,
    pub messages: &'a [Message],
    pub tools: &'a [ToolSpec],
    /// Index of the step being requested (0-based).
    pub turn: usize,
    pub temperature: f64,
}

/// One agent step: either text or a non-empty list of tool calls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentOutput {
    pub text: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    /// Generated-token count reported by the backend (e.g. usage).
    pub token_count: Option<usize>,
    /// Per-token records for trainable policies; one per generated token.
    pub token_records: Vec<TokenRecord>,
}

impl AgentOutput {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn calls(calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls: calls,
            ..Self::default()
        }
    }
}

pub trait AgentPolicy: Send {
    fn act(&mut self, view: &AgentView<'_>) -> Result<AgentOutput, RoleError>;

    /// True when the agent emits [`TokenRecord`]s, in which case the engine
    /// also fills observation records for every other message.
    fn tracks_tokens(&self) -> bool {
        false
    }
}

/// What the user simulator sees: the transcript, filtered by configuration.
pub struct UserView<'a> {
    pub task: &'a Task,
    pub messages: &'a [Message],
    pub include_tool_results: bool,
}

impl UserView<'_> {
    /// Messages visible to the user: its own lines and the agent's text,
    /// plus tool traffic when so configured. The system policy is hidden.
    pub fn visible(&self) -> impl Iterator<Item = &Message> {
        let tools = self.include_tool_results;
        self.messages.iter().filter(move |m| match m.role() {
            Role::User | Role::AgentText => true,
            Role::ToolCall | Role::ToolResult => tools,
            Role::System => false,
        })
    }
}

pub trait UserSimulator: Send {
    /// The opening user message.
    fn open(&mut self, task: &Task) -> Result<String, RoleError>;
    /// Reply to the latest agent text.
    fn reply(&mut self, view: &UserView<'_>) -> Result<String, RoleError>;
}

/// Placeholder user for `user_mode = none`; never consulted by the engine.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoUser;

impl UserSimulator for NoUser {
    fn open(&mut self, task: &Task) -> Result<String, RoleError> {
        Ok(task.user_scenario.clone())
    }

    fn reply(&mut self, _: &UserView<'_>) -> Result<String, RoleError> {
        Err(RoleError::Invalid("no user simulator configured".into()))
    }
}

/// Where tool calls are executed.
pub trait ToolBackend: Send {
    fn tool_specs(&self) -> Vec<ToolSpec>;
    fn call(&mut self, call: &ToolCall) -> ToolResult;

    /// Saves state so an over-budget call can be undone. Backends that cannot
    /// roll back return `None`.
    fn checkpoint(&mut self) -> Option<SnapshotToken> {
        None
    }
    fn rollback(&mut self, _token: SnapshotToken) {}
    fn release(&mut self, _token: SnapshotToken) {}

    /// The database at episode end, when the backend owns one.
    fn final_db(&self) -> Option<Database> {
        None
    }
}

impl ToolBackend for DomainEnv {
    fn tool_specs(&self) -> Vec<ToolSpec> {
        self.registry().specs().cloned().collect()
    }

    fn call(&mut self, call: &ToolCall) -> ToolResult {
        self.execute(call)
    }

    fn checkpoint(&mut self) -> Option<SnapshotToken> {
        Some(self.snapshot())
    }

    fn rollback(&mut self, token: SnapshotToken) {
        // Tokens come from `checkpoint` on this env and are used once.
        let _ = self.restore(token);
    }

    fn release(&mut self, token: SnapshotToken) {
        DomainEnv::release(self, token);
    }

    fn final_db(&self) -> Option<Database> {
        Some(self.db().clone())
    }
}

/// Backend for `tool_execution = none`: no tools are offered.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoTools;

impl ToolBackend for NoTools {
    fn tool_specs(&self) -> Vec<ToolSpec> {
        Vec::new()
    }

    fn call(&mut self, call: &ToolCall) -> ToolResult {
        ToolResult::Err(format!("Error: unknown tool {}", call.name))
    }
}
