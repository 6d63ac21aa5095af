use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::message::{STOP_SENTINEL, TRANSFER_SENTINEL};
use super::{AgentOutput, AgentPolicy, AgentView, RoleError};
use crate::env::ToolCall;

/// One scripted agent step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptStep {
    Text(String),
    Calls(Vec<ToolCall>),
}

impl From<ScriptStep> for AgentOutput {
    fn from(s: ScriptStep) -> Self {
        match s {
            ScriptStep::Text(t) => AgentOutput::text(t),
            ScriptStep::Calls(c) => AgentOutput::calls(c),
        }
    }
}

/// Replays fixed steps, then emits the stop sentinel forever.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    steps: VecDeque<AgentOutput>,
}

impl ScriptedAgent {
    pub fn new(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        Self {
            steps: steps.into_iter().map(AgentOutput::from).collect(),
        }
    }

    /// Replays raw outputs, including malformed ones.
    pub fn from_outputs(outputs: impl IntoIterator<Item = AgentOutput>) -> Self {
        Self {
            steps: outputs.into_iter().collect(),
        }
    }
}

impl AgentPolicy for ScriptedAgent {
    fn act(&mut self, _: &AgentView<'_>) -> Result<AgentOutput, RoleError> {
        Ok(self
            .steps
            .pop_front()
            .unwrap_or_else(|| AgentOutput::text(STOP_SENTINEL)))
    }
}

/// Seeded adversarial agent: random text (sometimes very long), sentinels,
/// single or batched tool calls with arguments drawn from a pool, and the
/// occasional malformed step.
#[derive(Debug, Clone)]
pub struct FuzzAgent {
    rng: ChaCha8Rng,
    arguments: Vec<Value>,
}

const WORDS: &[&str] = &[
    "order", "please", "confirm", "the", "item", "refund", "address", "yes", "I", "will", "check",
];

impl FuzzAgent {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            arguments: vec![json!({})],
        }
    }

    /// Argument objects to draw tool-call arguments from.
    pub fn with_arguments(mut self, pool: Vec<Value>) -> Self {
        if !pool.is_empty() {
            self.arguments = pool;
        }
        self
    }

    fn words(&mut self) -> String {
        // Mostly short, occasionally far past any sensible budget.
        let n = if self.rng.gen_bool(0.05) {
            self.rng.gen_range(2_000..6_000)
        } else {
            self.rng.gen_range(1..40)
        };
        (0..n)
            .map(|_| *WORDS.choose(&mut self.rng).expect("non-empty"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn call(&mut self, view: &AgentView<'_>) -> ToolCall {
        let name = match view.tools.choose(&mut self.rng) {
            Some(t) if !self.rng.gen_bool(0.05) => t.name.clone(),
            _ => "no_such_tool".to_string(),
        };
        let arguments = self.arguments.choose(&mut self.rng).cloned().unwrap_or(json!({}));
        ToolCall::new(name, arguments)
    }
}

impl AgentPolicy for FuzzAgent {
    fn act(&mut self, view: &AgentView<'_>) -> Result<AgentOutput, RoleError> {
        let roll = self.rng.gen_range(0..100);
        Ok(match roll {
            0..=1 => AgentOutput::text(format!("Done. {STOP_SENTINEL}")),
            2 => AgentOutput::text(TRANSFER_SENTINEL),
            3 => AgentOutput {
                text: Some("both".into()),
                tool_calls: vec![self.call(view)],
                ..AgentOutput::default()
            },
            4 => AgentOutput::default(),
            5..=39 => AgentOutput::text(self.words()),
            40..=84 => AgentOutput::calls(vec![self.call(view)]),
            _ => {
                let n = self.rng.gen_range(2..5);
                AgentOutput::calls((0..n).map(|_| self.call(view)).collect())
            }
        })
    }
}
