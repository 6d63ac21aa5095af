//! Re-running a recorded trajectory with scripted roles.
//!
//! The agent repeats its recorded steps (with the recorded token counts) and
//! the user its recorded lines, so on a deterministic backend the replay
//! reproduces the transcript and the final database. An episode that ended on
//! the token cap is closed by one more step that cannot fit, whichever side
//! speaks next.

use std::collections::VecDeque;

use super::engine::{approx_tokens, call_tokens, run_rollout};
use super::message::{Body, Message, Termination, Trajectory, STOP_SENTINEL};
use super::{
    AgentOutput, AgentPolicy, AgentView, RoleError, RolloutConfig, ToolBackend, UserSimulator, UserView,
};
use crate::env::Task;

/// The agent's steps in `messages`: each text message is one step, and the
/// tool calls of one turn form one step. A step's token count is carried
/// only when it differs from what the engine would estimate.
pub fn recorded_steps(messages: &[Message]) -> Vec<AgentOutput> {
    let mut steps: Vec<(usize, AgentOutput, Vec<usize>)> = Vec::new();
    for m in messages {
        match &m.body {
            Body::AgentText(t) => {
                steps.push((m.turn_index, AgentOutput::text(t.clone()), vec![m.token_count]))
            }
            Body::ToolCall(c) => match steps.last_mut() {
                Some((turn, out, counts)) if *turn == m.turn_index && out.text.is_none() => {
                    out.tool_calls.push(c.clone());
                    counts.push(m.token_count);
                }
                _ => steps.push((
                    m.turn_index,
                    AgentOutput::calls(vec![c.clone()]),
                    vec![m.token_count],
                )),
            },
            _ => {}
        }
    }
    steps
        .into_iter()
        .map(|(_, mut out, counts)| {
            let estimated: Vec<usize> = match &out.text {
                Some(t) => vec![approx_tokens(t)],
                None => out.tool_calls.iter().map(call_tokens).collect(),
            };
            if estimated != counts {
                out.token_count = Some(counts.iter().sum());
            }
            out
        })
        .collect()
}

struct ReplayAgent(VecDeque<AgentOutput>);

impl AgentPolicy for ReplayAgent {
    fn act(&mut self, _: &AgentView<'_>) -> Result<AgentOutput, RoleError> {
        Ok(self
            .0
            .pop_front()
            .unwrap_or_else(|| AgentOutput::text(STOP_SENTINEL)))
    }
}

struct ReplayUser(VecDeque<String>);

impl ReplayUser {
    fn next(&mut self) -> String {
        self.0.pop_front().unwrap_or_else(|| STOP_SENTINEL.to_string())
    }
}

impl UserSimulator for ReplayUser {
    fn open(&mut self, _: &Task) -> Result<String, RoleError> {
        Ok(self.next())
    }

    fn reply(&mut self, _: &UserView<'_>) -> Result<String, RoleError> {
        Ok(self.next())
    }
}

/// Re-runs `recorded` on `backend` under `cfg` with scripted roles.
pub fn replay_trajectory(
    task: &Task,
    recorded: &Trajectory,
    backend: &mut dyn ToolBackend,
    cfg: &RolloutConfig,
) -> Trajectory {
    let mut steps: VecDeque<AgentOutput> = recorded_steps(&recorded.messages).into();
    let mut lines: VecDeque<String> = recorded
        .messages
        .iter()
        .filter_map(|m| match &m.body {
            Body::User(t) => Some(t.clone()),
            _ => None,
        })
        .collect();
    if recorded.termination == Termination::TokenCap {
        steps.push_back(AgentOutput {
            token_count: Some(cfg.max_tokens + 1),
            ..AgentOutput::text("…")
        });
        lines.push_back("x ".repeat(cfg.max_tokens + 1));
    }
    run_rollout(
        task,
        &mut ReplayAgent(steps),
        &mut ReplayUser(lines),
        backend,
        cfg,
    )
}
