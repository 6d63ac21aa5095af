//! Dual verification: deterministic rule checks, then a judge model.

use serde::{Deserialize, Serialize};

use super::pipeline::{SynthTrajectory, Verdict};
use super::SynthError;
use crate::clients::{ChatClient, ChatMessage, ChatRequest};
use crate::rollout::{Message, Role, RoleError, Termination};

pub const RULES_V1: &str = include_str!("../../fixtures/rules.v1.json");
pub const JUDGE_PROMPT_TEMPLATE: &str = include_str!("../../fixtures/prompts/judge.v1.json");

/// Versioned rule configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub version: String,
    /// System first, then user; agent text answered by the user; no two user
    /// or two agent-text messages in a row.
    pub role_alternation: bool,
    /// Every tool call is directly followed by its result.
    pub answered_tool_calls: bool,
    /// The episode ended on the stop or transfer sentinel.
    pub sentinel_terminated: bool,
    pub min_successful_tool_calls: usize,
}

impl RuleSet {
    pub fn v1() -> Self {
        serde_json::from_str(RULES_V1).expect("bundled rules parse")
    }
}

fn successor_ok(prev: Role, next: Role) -> bool {
    use Role::*;
    match prev {
        System => next == User,
        User => matches!(next, AgentText | ToolCall),
        AgentText => next == User,
        // Checked by the answered-calls rule.
        ToolCall => true,
        ToolResult => matches!(next, ToolCall | AgentText),
    }
}

/// All rule violations of `messages`/`termination`, in a stable order.
pub fn check_rules(messages: &[Message], termination: Termination, rules: &RuleSet) -> Vec<String> {
    let mut out = Vec::new();
    if rules.role_alternation {
        if messages.first().map(Message::role) != Some(Role::System) {
            out.push("transcript does not start with the system policy".to_string());
        }
        if let Some(i) = messages.iter().skip(1).position(|m| m.role() == Role::System) {
            out.push(format!("extra system message at {}", i + 1));
        }
        for (i, w) in messages.windows(2).enumerate() {
            let (a, b) = (w[0].role(), w[1].role());
            if a != Role::System && b != Role::System && !successor_ok(a, b) {
                out.push(format!("illegal role order at {}: {a:?} then {b:?}", i + 1));
            }
        }
    }
    if rules.answered_tool_calls {
        for (i, m) in messages.iter().enumerate() {
            let answered = messages.get(i + 1).is_some_and(|n| n.role() == Role::ToolResult);
            if m.role() == Role::ToolCall && !answered {
                out.push(format!("tool call at {i} has no result"));
            }
            if m.role() == Role::ToolResult && (i == 0 || messages[i - 1].role() != Role::ToolCall) {
                out.push(format!("tool result at {i} answers no call"));
            }
        }
    }
    if rules.sentinel_terminated && !matches!(termination, Termination::Stop | Termination::Transfer) {
        out.push(format!("episode ended with {termination:?}, not a sentinel"));
    }
    let ok_calls = messages
        .iter()
        .filter_map(Message::tool_result)
        .filter(|r| r.is_ok())
        .count();
    if ok_calls < rules.min_successful_tool_calls {
        out.push(format!(
            "no tool use: {ok_calls} successful tool calls, {} required",
            rules.min_successful_tool_calls
        ));
    }
    out
}

/// Something that can judge a rule-passing trajectory.
pub trait Judge {
    /// `Ok((accept, rationale))`; `Err` when no verdict could be obtained.
    fn judge(&self, traj: &SynthTrajectory) -> Result<(bool, String), RoleError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeTemplate {
    pub version: String,
    pub system: String,
    pub accept_token: String,
    pub reject_token: String,
}

impl JudgeTemplate {
    pub fn bundled() -> Self {
        serde_json::from_str(JUDGE_PROMPT_TEMPLATE).expect("bundled template parses")
    }

    /// Reads the verdict token (the first word, ignoring surrounding
    /// punctuation) and the rationale after it.
    pub fn parse_reply(&self, reply: &str) -> Option<(bool, String)> {
        let reply = reply.trim();
        let (first, rest) = reply.split_once(char::is_whitespace).unwrap_or((reply, ""));
        let token = first.trim_matches(|c: char| !c.is_alphanumeric());
        let accept = if token == self.accept_token {
            true
        } else if token == self.reject_token {
            false
        } else {
            return None;
        };
        Some((accept, rest.trim().to_string()))
    }
}

/// Plain-text rendering of a transcript for the judge.
pub fn render_transcript(messages: &[Message]) -> String {
    let mut out = String::new();
    for m in messages {
        let line = match m.role() {
            Role::System => format!("[policy]\n{}", m.text().unwrap_or_default()),
            Role::User => format!("[user] {}", m.text().unwrap_or_default()),
            Role::AgentText => format!("[agent] {}", m.text().unwrap_or_default()),
            Role::ToolCall => {
                let c = m.tool_call().expect("tool call body");
                format!("[agent calls] {} {}", c.name, c.arguments)
            }
            Role::ToolResult => {
                let r = m.tool_result().expect("tool result body");
                let tag = if r.is_ok() { "tool" } else { "tool error" };
                format!("[{tag}] {}", r.to_content())
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Judge backed by a chat model.
#[derive(Debug, Clone)]
pub struct LlmJudge {
    client: ChatClient,
    model: String,
    template: JudgeTemplate,
}

impl LlmJudge {
    pub fn new(client: ChatClient, model: impl Into<String>, template: JudgeTemplate) -> Self {
        Self {
            client,
            model: model.into(),
            template,
        }
    }

    pub fn request(&self, traj: &SynthTrajectory) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage::system(self.template.system.clone()),
                ChatMessage::user(render_transcript(&traj.messages)),
            ],
            tools: None,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

impl Judge for LlmJudge {
    fn judge(&self, traj: &SynthTrajectory) -> Result<(bool, String), RoleError> {
        let resp = self.client.chat(&self.request(traj))?;
        let text = resp.content.unwrap_or_default();
        self.template
            .parse_reply(&text)
            .ok_or_else(|| RoleError::Invalid(format!("judge reply has no verdict token: {text}")))
    }
}

/// Decides an unverified trajectory. Rule violations reject without
/// consulting the judge; a judge failure leaves the trajectory unverified.
pub fn dual_verify(
    traj: &mut SynthTrajectory,
    rules: &RuleSet,
    judge: &dyn Judge,
) -> Result<Verdict, SynthError> {
    if traj.verdict != Verdict::Unverified {
        return Err(SynthError::AlreadyVerified(traj.verdict));
    }
    let violations = check_rules(&traj.messages, traj.termination, rules);
    if !violations.is_empty() {
        traj.verdict = Verdict::Rejected;
        traj.judge_rationale = format!("rule check failed: {}", violations.join("; "));
        traj.rule_violations = violations;
        return Ok(traj.verdict);
    }
    match judge.judge(traj) {
        Ok((accept, rationale)) => {
            traj.verdict = if accept {
                Verdict::Accepted
            } else {
                Verdict::Rejected
            };
            traj.judge_rationale = rationale;
        }
        Err(e) => traj.judge_rationale = format!("judge unavailable: {e}"),
    }
    Ok(traj.verdict)
}
