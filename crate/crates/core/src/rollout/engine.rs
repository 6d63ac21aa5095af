use log::debug;

use super::message::{detect_in_text, Body, Message, Role, Signal, Termination, Trajectory};
use super::{
    AgentOutput, AgentPolicy, AgentView, RolloutConfig, RolloutError, ToolBackend, ToolExecution, UserMode,
    UserSimulator, UserView,
};
use crate::env::{Task, ToolCall, ToolResult};
use crate::grpo::TokenRecord;

/// Approximate token count: each run of alphanumeric characters is one
/// token, as is every other non-whitespace character. Never below 1.
pub fn approx_tokens(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            if !in_word {
                n += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !ch.is_whitespace() {
                n += 1;
            }
        }
    }
    n.max(1)
}

pub(super) fn call_tokens(call: &ToolCall) -> usize {
    approx_tokens(&call.name) + approx_tokens(&call.arguments.to_string())
}

fn result_tokens(result: &ToolResult) -> usize {
    approx_tokens(&result.to_content())
}

/// Splits `total` tokens over `k` messages, earlier messages taking the
/// remainder.
fn split_count(total: usize, k: usize) -> Vec<usize> {
    let (q, r) = (total / k, total % k);
    (0..k).map(|i| q + usize::from(i < r)).collect()
}

struct Recorder<'a> {
    traj: Trajectory,
    used: usize,
    max_tokens: usize,
    track: bool,
    task: &'a Task,
}

impl Recorder<'_> {
    fn fits(&self, extra: usize) -> bool {
        self.used + extra <= self.max_tokens
    }

    /// Appends a message without a budget check; callers check `fits` first.
    fn push(&mut self, body: Body, turn: usize, count: usize, records: Option<&[TokenRecord]>) {
        self.used += count;
        self.traj.messages.push(Message::new(body, turn, count));
        if self.track {
            match records {
                Some(r) => self.traj.token_records.extend_from_slice(r),
                None => self
                    .traj
                    .token_records
                    .extend(std::iter::repeat_n(TokenRecord::observation(), count)),
            }
        }
    }

    fn finish(mut self, termination: Termination, backend: &dyn ToolBackend) -> Trajectory {
        self.traj.termination = termination;
        self.traj.final_db = backend.final_db();
        self.traj.final_db_hash = self.traj.final_db.as_ref().map(|db| db.content_hash());
        debug!(
            "rollout {} ended with {:?} after {} turns",
            self.task.id,
            termination,
            self.traj.num_turns()
        );
        self.traj
    }

    fn fail(mut self, reason: String, backend: &dyn ToolBackend) -> Trajectory {
        self.traj.error = Some(reason);
        self.finish(Termination::ProtocolError, backend)
    }
}

/// Runs one episode of `task`.
///
/// The system policy and the opening user message form turn 0 together with
/// the agent's first step; each further agent step opens a new turn, and a
/// user reply belongs to the turn of the agent text it answers. No message is
/// appended that would push the token total past `cfg.max_tokens`; a tool call
/// whose exchange does not fit is rolled back when the backend supports it.
pub fn run_rollout(
    task: &Task,
    agent: &mut dyn AgentPolicy,
    user: &mut dyn UserSimulator,
    backend: &mut dyn ToolBackend,
    cfg: &RolloutConfig,
) -> Trajectory {
    let mut rec = Recorder {
        traj: Trajectory::new(task.id.clone()),
        used: 0,
        max_tokens: cfg.max_tokens,
        track: agent.tracks_tokens(),
        task,
    };
    let tools = match cfg.tool_execution {
        ToolExecution::None => Vec::new(),
        _ => backend.tool_specs(),
    };

    if !task.system_policy.is_empty() {
        let n = approx_tokens(&task.system_policy);
        if !rec.fits(n) {
            return rec.finish(Termination::TokenCap, backend);
        }
        rec.push(Body::System(task.system_policy.clone()), 0, n, None);
    }
    let seed = match cfg.user_mode {
        UserMode::None => task.user_scenario.clone(),
        _ => match user.open(task) {
            Ok(s) => s,
            Err(e) => return rec.fail(format!("user simulator: {e}"), backend),
        },
    };
    let n = approx_tokens(&seed);
    if !rec.fits(n) {
        return rec.finish(Termination::TokenCap, backend);
    }
    let signal = detect_in_text(&seed);
    rec.push(Body::User(seed), 0, n, None);
    if let Some(t) = ended(signal) {
        return rec.finish(t, backend);
    }

    let mut steps = 0usize;
    loop {
        if steps == cfg.max_turns {
            return rec.finish(Termination::TurnCap, backend);
        }
        let turn = steps;
        let out = {
            let view = AgentView {
                task,
                messages: &rec.traj.messages,
                tools: &tools,
                turn,
                temperature: cfg.agent_temperature,
            };
            agent.act(&view)
        };
        steps += 1;
        let out = match out {
            Ok(o) => o,
            Err(e) => return rec.fail(format!("agent: {e}"), backend),
        };
        let AgentOutput {
            text,
            tool_calls,
            token_count,
            token_records,
        } = out;

        match (text, tool_calls.is_empty()) {
            (Some(_), false) => {
                return rec.fail("agent emitted text and tool calls in one step".into(), backend)
            }
            (None, true) => return rec.fail("agent emitted an empty step".into(), backend),
            (None, false) => {
                if cfg.tool_execution == ToolExecution::None {
                    return rec.fail("tool call while tool execution is disabled".into(), backend);
                }
                let counts = agent_counts(&token_records, token_count, &tool_calls, None);
                let mut offset = 0;
                for (call, count) in tool_calls.into_iter().zip(counts) {
                    let records = slice_records(&token_records, &mut offset, count, rec.track);
                    if !rec.fits(count) {
                        return rec.finish(Termination::TokenCap, backend);
                    }
                    let token = backend.checkpoint();
                    let result = backend.call(&call);
                    let rt = result_tokens(&result);
                    if !rec.fits(count + rt) {
                        if let Some(t) = token {
                            backend.rollback(t);
                        }
                        return rec.finish(Termination::TokenCap, backend);
                    }
                    if let Some(t) = token {
                        backend.release(t);
                    }
                    rec.push(Body::ToolCall(call), turn, count, records);
                    rec.push(Body::ToolResult(result), turn, rt, None);
                }
            }
            (Some(text), true) => {
                let count = agent_counts(&token_records, token_count, &[], Some(&text))[0];
                let records = slice_records(&token_records, &mut 0, count, rec.track);
                if !rec.fits(count) {
                    return rec.finish(Termination::TokenCap, backend);
                }
                let signal = detect_in_text(&text);
                rec.push(Body::AgentText(text), turn, count, records);
                if let Some(t) = ended(signal) {
                    return rec.finish(t, backend);
                }
                if cfg.user_mode == UserMode::None {
                    // Without a user, agent text is the final answer.
                    return rec.finish(Termination::Stop, backend);
                }
                let reply = {
                    let view = UserView {
                        task,
                        messages: &rec.traj.messages,
                        include_tool_results: cfg.user_sees_tool_results,
                    };
                    user.reply(&view)
                };
                let reply = match reply {
                    Ok(r) => r,
                    Err(e) => return rec.fail(format!("user simulator: {e}"), backend),
                };
                let n = approx_tokens(&reply);
                if !rec.fits(n) {
                    return rec.finish(Termination::TokenCap, backend);
                }
                let signal = detect_in_text(&reply);
                rec.push(Body::User(reply), turn, n, None);
                if let Some(t) = ended(signal) {
                    return rec.finish(t, backend);
                }
            }
        }
    }
}

fn ended(signal: Signal) -> Option<Termination> {
    match signal {
        Signal::Continue => None,
        Signal::Stop => Some(Termination::Stop),
        Signal::Transfer => Some(Termination::Transfer),
    }
}

/// Token counts for the messages of one agent step. Token records take
/// precedence, then a backend-reported count, then the approximate count.
fn agent_counts(
    records: &[TokenRecord],
    reported: Option<usize>,
    calls: &[ToolCall],
    text: Option<&str>,
) -> Vec<usize> {
    let k = if text.is_some() { 1 } else { calls.len() };
    if !records.is_empty() {
        return split_count(records.len(), k);
    }
    if let Some(n) = reported {
        return split_count(n, k);
    }
    match text {
        Some(t) => vec![approx_tokens(t)],
        None => calls.iter().map(call_tokens).collect(),
    }
}

fn slice_records<'r>(
    records: &'r [TokenRecord],
    offset: &mut usize,
    count: usize,
    track: bool,
) -> Option<&'r [TokenRecord]> {
    if !track || records.is_empty() {
        return None;
    }
    let s = &records[*offset..*offset + count];
    *offset += count;
    Some(s)
}

/// Sets each token's mask from the role of the message it belongs to:
/// agent text and tool calls train, everything else does not.
pub fn tag_tokens(traj: &Trajectory) -> Result<Trajectory, RolloutError> {
    let expected: usize = traj.messages.iter().map(|m| m.token_count).sum();
    if traj.token_records.len() != expected {
        return Err(RolloutError::Misaligned(format!(
            "{} token records for {} message tokens",
            traj.token_records.len(),
            expected
        )));
    }
    let mut out = traj.clone();
    let mut i = 0;
    for m in &traj.messages {
        let mask = matches!(m.role(), Role::AgentText | Role::ToolCall);
        for r in &mut out.token_records[i..i + m.token_count] {
            r.mask = mask;
        }
        i += m.token_count;
    }
    Ok(out)
}
