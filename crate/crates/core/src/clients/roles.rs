//! Agent and user-simulator roles: the model-backed implementations and the
//! scripted user used for offline rollouts.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::http::ChatClient;
use super::transcript::chat_transcript;
use super::wire::{ChatMessage, ChatRequest};
use super::ClientError;
use crate::env::Task;
use crate::rollout::{
    AgentOutput, AgentPolicy, AgentView, Message, Role, RoleError, UserSimulator, UserView, STOP_SENTINEL,
    TRANSFER_SENTINEL,
};

/// The bundled user-simulator prompt (JSON, see [`PromptTemplate`]).
pub const USER_PROMPT_TEMPLATE: &str = include_str!("../../fixtures/prompts/user_simulator.v1.json");

impl From<ClientError> for RoleError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Malformed(_) | ClientError::InvalidRequest(_) => RoleError::Invalid(e.to_string()),
            _ => RoleError::Transport(e.to_string()),
        }
    }
}

/// Which sentinel a scripted user sends once its script runs out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentinelPolicy {
    #[default]
    Stop,
    Transfer,
}

impl SentinelPolicy {
    pub fn sentinel(self) -> &'static str {
        match self {
            SentinelPolicy::Stop => STOP_SENTINEL,
            SentinelPolicy::Transfer => TRANSFER_SENTINEL,
        }
    }
}

/// Replays a fixed list of user lines: the first opens the conversation,
/// each later one answers one agent message, then the sentinel repeats.
#[derive(Debug, Clone)]
pub struct ScriptedUser {
    lines: Vec<String>,
    next: usize,
    policy: SentinelPolicy,
}

impl ScriptedUser {
    pub fn new(lines: Vec<String>, policy: SentinelPolicy) -> Result<Self, RoleError> {
        if lines.is_empty() {
            return Err(RoleError::Invalid("user script is empty".into()));
        }
        Ok(Self {
            lines,
            next: 0,
            policy,
        })
    }

    /// The task's own script, or its scenario text as a one-line script.
    pub fn for_task(task: &Task) -> Self {
        let lines = if task.user_script.is_empty() {
            vec![task.user_scenario.clone()]
        } else {
            task.user_script.clone()
        };
        Self {
            lines,
            next: 0,
            policy: SentinelPolicy::Stop,
        }
    }

    fn next_line(&mut self) -> String {
        match self.lines.get(self.next) {
            Some(line) => {
                self.next += 1;
                line.clone()
            }
            None => self.policy.sentinel().to_string(),
        }
    }
}

impl UserSimulator for ScriptedUser {
    fn open(&mut self, _task: &Task) -> Result<String, RoleError> {
        Ok(self.next_line())
    }

    fn reply(&mut self, _view: &UserView<'_>) -> Result<String, RoleError> {
        Ok(self.next_line())
    }
}

/// Versioned user-simulator prompt. `{scenario}`, `{stop}` and `{transfer}`
/// in `system` are substituted per task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub version: String,
    pub system: String,
    /// Instruction that elicits the opening message.
    pub opening: String,
}

impl PromptTemplate {
    pub fn bundled() -> Self {
        Self::parse(USER_PROMPT_TEMPLATE).expect("bundled template parses")
    }

    pub fn parse(json: &str) -> Result<Self, ClientError> {
        serde_json::from_str(json).map_err(|e| ClientError::Config(format!("prompt template: {e}")))
    }

    pub fn render_system(&self, task: &Task) -> String {
        self.system
            .replace("{scenario}", &task.user_scenario)
            .replace("{stop}", STOP_SENTINEL)
            .replace("{transfer}", TRANSFER_SENTINEL)
    }
}

/// Pushes `msg`, merging it into the previous message when both have the
/// same plain-text role (the protocol forbids back-to-back assistant turns).
fn push_merged(out: &mut Vec<ChatMessage>, msg: ChatMessage) {
    if let Some(last) = out.last_mut() {
        if last.role == msg.role && last.tool_calls.is_none() && msg.tool_calls.is_none() {
            let joined = [last.content.take(), msg.content]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join("\n\n");
            last.content = Some(joined);
            return;
        }
    }
    out.push(msg);
}

/// User simulator backed by a chat model. The transcript is shown with roles
/// flipped: the simulator's own lines are `assistant`, the agent's `user`.
#[derive(Debug, Clone)]
pub struct LlmUser {
    client: ChatClient,
    model: String,
    template: PromptTemplate,
    temperature: f64,
    max_tokens: usize,
}

impl LlmUser {
    pub fn new(client: ChatClient, model: impl Into<String>, template: PromptTemplate) -> Self {
        Self {
            client,
            model: model.into(),
            template,
            temperature: 1.0,
            max_tokens: 512,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// The request sent for `messages` (the visible transcript).
    pub fn request<'a>(&self, task: &Task, messages: impl Iterator<Item = &'a Message>) -> ChatRequest {
        let mut out = vec![ChatMessage::system(self.template.render_system(task))];
        let mut any = false;
        for m in messages {
            let flipped = match m.role() {
                Role::User => ChatMessage::assistant(m.text().unwrap_or_default()),
                Role::AgentText => ChatMessage::user(m.text().unwrap_or_default()),
                Role::ToolCall => {
                    let c = m.tool_call().expect("tool call body");
                    ChatMessage::user(format!("[agent calls {} with {}]", c.name, c.arguments))
                }
                Role::ToolResult => {
                    let r = m.tool_result().expect("tool result body");
                    ChatMessage::user(format!("[tool result] {}", r.to_content()))
                }
                Role::System => continue,
            };
            any = true;
            push_merged(&mut out, flipped);
        }
        if !any {
            out.push(ChatMessage::user(self.template.opening.clone()));
        }
        ChatRequest {
            model: self.model.clone(),
            messages: out,
            tools: None,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    fn ask(&self, req: &ChatRequest) -> Result<String, RoleError> {
        let resp = self.client.chat(req)?;
        resp.content
            .map(|c| c.trim().to_string())
            .ok_or_else(|| RoleError::Invalid("user simulator answered with tool calls".into()))
    }
}

impl UserSimulator for LlmUser {
    fn open(&mut self, task: &Task) -> Result<String, RoleError> {
        self.ask(&self.request(task, std::iter::empty()))
    }

    fn reply(&mut self, view: &UserView<'_>) -> Result<String, RoleError> {
        self.ask(&self.request(view.task, view.visible()))
    }
}

/// Agent policy backed by a chat model in function-calling mode.
#[derive(Debug, Clone)]
pub struct LlmAgent {
    client: ChatClient,
    model: String,
    max_tokens: usize,
}

impl LlmAgent {
    pub fn new(client: ChatClient, model: impl Into<String>, max_tokens: usize) -> Self {
        Self {
            client,
            model: model.into(),
            max_tokens,
        }
    }

    /// The request for `view`: the transcript in chat form plus the
    /// function declarations of the offered tools.
    pub fn request(&self, view: &AgentView<'_>) -> ChatRequest {
        let out = chat_transcript(view.messages, false);
        let tools: Vec<Value> = view.tools.iter().map(|t| t.function_declaration()).collect();
        ChatRequest {
            model: self.model.clone(),
            messages: out,
            tools: (!tools.is_empty()).then_some(tools),
            temperature: view.temperature,
            max_tokens: self.max_tokens,
        }
    }
}

impl AgentPolicy for LlmAgent {
    fn act(&mut self, view: &AgentView<'_>) -> Result<AgentOutput, RoleError> {
        let resp = self.client.chat(&self.request(view))?;
        Ok(AgentOutput {
            text: resp.content,
            tool_calls: resp.tool_calls,
            token_count: (resp.usage.completion_tokens > 0).then_some(resp.usage.completion_tokens),
            token_records: Vec::new(),
        })
    }
}
