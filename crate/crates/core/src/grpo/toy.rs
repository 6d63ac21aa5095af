//! Small environments the tabular policy can be trained on end to end.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::policy::{PolicyParams, TokenRecord};
use super::trainer::TrainEnv;
use crate::env::{load_domain, DomainBundle, RewardResult, Task, ToolCall, VerificationCriterion};
use crate::rollout::{
    run_group, run_rollout, AgentOutput, AgentPolicy, AgentView, Body, Group, NoTools, NoUser, RoleError,
    RolloutConfig, RolloutError, RolloutRoles, ToolExecution, UserMode,
};

/// What one policy action produces in the conversation.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionTemplate {
    Text(String),
    Call(ToolCall),
}

/// Maps the conversation so far to a policy context id.
pub type ContextFn = Arc<dyn Fn(&AgentView<'_>) -> usize + Send + Sync>;

/// Agent backed by a [`PolicyParams`] table: one sampled action per step,
/// emitted as one token with its old/reference log-probabilities.
pub struct CategoricalAgent {
    policy: Arc<PolicyParams>,
    reference: Arc<PolicyParams>,
    actions: Arc<Vec<ActionTemplate>>,
    context: ContextFn,
    rng: ChaCha8Rng,
}

impl CategoricalAgent {
    pub fn new(
        policy: Arc<PolicyParams>,
        reference: Arc<PolicyParams>,
        actions: Arc<Vec<ActionTemplate>>,
        context: ContextFn,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            policy,
            reference,
            actions,
            context,
            rng,
        }
    }
}

impl AgentPolicy for CategoricalAgent {
    fn act(&mut self, view: &AgentView<'_>) -> Result<AgentOutput, RoleError> {
        let c = (self.context)(view);
        if c >= self.policy.num_contexts {
            return Err(RoleError::Invalid(format!(
                "context {c} outside the policy table"
            )));
        }
        let a = self.policy.sample(c, view.temperature, &mut self.rng);
        let record = TokenRecord {
            context_id: c,
            action_id: a,
            logprob_old: self.policy.logprob(c, a),
            logprob_ref: self.reference.logprob(c, a),
            mask: true,
        };
        let mut out = match &self.actions[a] {
            ActionTemplate::Text(t) => AgentOutput::text(t.clone()),
            ActionTemplate::Call(call) => AgentOutput::calls(vec![call.clone()]),
        };
        out.token_records = vec![record];
        Ok(out)
    }

    fn tracks_tokens(&self) -> bool {
        true
    }
}

/// The bundled three-step tool task: call `tool_a`, then `tool_b`, then
/// reply with the stop sentinel. `think` is available as a distractor.
pub const TOY_DOMAIN: &str = include_str!("../../fixtures/toy_domain.json");

pub fn toy_domain() -> DomainBundle {
    load_domain(TOY_DOMAIN).expect("bundled toy domain is valid")
}

/// Exact success probability of the uniform policy on the toy task, as an
/// reduced fraction `(numerator, denominator)` plus its value.
///
/// With four equiprobable actions, an episode succeeds iff its non-think
/// actions are exactly `tool_a`, `tool_b`, stop, in that order, and the whole
/// episode fits in `max_turns` steps. With `k` think steps spread over the
/// three gaps there are `C(k+2, 2)` orderings, each of probability
/// `4^-(k+3)`.
pub fn toy_uniform_success_probability(max_turns: usize) -> (u128, u128, f64) {
    assert!(max_turns <= 60, "exact fraction only for max_turns <= 60");
    if max_turns < 3 {
        return (0, 1, 0.0);
    }
    let den: u128 = 1 << (2 * max_turns);
    let mut num: u128 = 0;
    for k in 0..=(max_turns - 3) {
        let k = k as u128;
        let ways = (k + 2) * (k + 1) / 2;
        num += ways * (den >> (2 * (k + 3)));
    }
    let g = gcd(num, den);
    (num / g, den / g, num as f64 / den as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Training wrapper around [`toy_domain`]. Contexts count the non-think
/// tool calls made so far, capped at 3; actions are `tool_a`, `tool_b`,
/// `think` and the stop sentinel.
pub struct ToyToolEnv {
    bundle: DomainBundle,
    actions: Vec<ActionTemplate>,
}

impl Default for ToyToolEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyToolEnv {
    pub const NUM_CONTEXTS: usize = 4;

    pub fn new() -> Self {
        Self {
            bundle: toy_domain(),
            actions: vec![
                ActionTemplate::Call(ToolCall::new("tool_a", json!({}))),
                ActionTemplate::Call(ToolCall::new("tool_b", json!({}))),
                ActionTemplate::Call(ToolCall::new("think", json!({"thought": "considering"}))),
                ActionTemplate::Text(crate::rollout::STOP_SENTINEL.to_string()),
            ],
        }
    }

    pub fn bundle(&self) -> &DomainBundle {
        &self.bundle
    }
}

impl TrainEnv for ToyToolEnv {
    fn num_contexts(&self) -> usize {
        Self::NUM_CONTEXTS
    }

    fn actions(&self) -> &[ActionTemplate] {
        &self.actions
    }

    fn context_fn(&self) -> ContextFn {
        Arc::new(|view: &AgentView<'_>| {
            let calls = view
                .messages
                .iter()
                .filter(|m| matches!(&m.body, Body::ToolCall(c) if c.name != "think"))
                .count();
            calls.min(3)
        })
    }

    fn task_ids(&self) -> Vec<String> {
        self.bundle.tasks().iter().map(|t| t.id.clone()).collect()
    }

    fn tool_names(&self) -> Vec<String> {
        self.bundle
            .registry()
            .names()
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn run_group(
        &self,
        task: usize,
        cfg: &RolloutConfig,
        agent: &(dyn Fn(usize) -> Box<dyn AgentPolicy> + Sync),
    ) -> Result<Group, RolloutError> {
        let cfg = RolloutConfig {
            user_mode: UserMode::None,
            tool_execution: ToolExecution::LocalEnv,
            ..cfg.clone()
        };
        let roles = |i: usize| RolloutRoles {
            agent: agent(i),
            user: Box::new(NoUser),
        };
        run_group(&self.bundle, &self.bundle.tasks()[task], &cfg, &roles)
    }
}

/// One-step multi-armed bandit: a single context, one text action per arm,
/// reward 1 exactly for `rewarding_arm`.
pub struct BanditEnv {
    arms: usize,
    rewarding_arm: usize,
    task: Task,
    actions: Vec<ActionTemplate>,
}

impl BanditEnv {
    pub fn new(arms: usize, rewarding_arm: usize) -> Self {
        assert!(rewarding_arm < arms, "rewarding arm must exist");
        Self {
            arms,
            rewarding_arm,
            task: Task {
                id: "bandit".into(),
                domain_id: "bandit".into(),
                system_policy: String::new(),
                user_scenario: "Pick an arm.".into(),
                initial_db: "base".into(),
                criteria: vec![VerificationCriterion::DbRecordPresent {
                    target: "arms.chosen".into(),
                }],
                required_write_actions: None,
                user_script: Vec::new(),
                require_stop: false,
            },
            actions: (0..arms)
                .map(|a| ActionTemplate::Text(format!("arm {a}")))
                .collect(),
        }
    }

    pub fn arms(&self) -> usize {
        self.arms
    }
}

impl TrainEnv for BanditEnv {
    fn num_contexts(&self) -> usize {
        1
    }

    fn actions(&self) -> &[ActionTemplate] {
        &self.actions
    }

    fn context_fn(&self) -> ContextFn {
        Arc::new(|_: &AgentView<'_>| 0)
    }

    fn task_ids(&self) -> Vec<String> {
        vec![self.task.id.clone()]
    }

    fn tool_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn run_group(
        &self,
        _task: usize,
        cfg: &RolloutConfig,
        agent: &(dyn Fn(usize) -> Box<dyn AgentPolicy> + Sync),
    ) -> Result<Group, RolloutError> {
        cfg.validate()?;
        let cfg = RolloutConfig {
            user_mode: UserMode::None,
            tool_execution: ToolExecution::None,
            ..cfg.clone()
        };
        let winner = format!("arm {}", self.rewarding_arm);
        let mut group = Group {
            task_id: self.task.id.clone(),
            trajectories: Vec::new(),
            rewards: Vec::new(),
            results: Vec::new(),
            completion_order: Vec::new(),
        };
        for i in 0..cfg.group_size {
            let mut a = agent(i);
            let traj = run_rollout(&self.task, a.as_mut(), &mut NoUser, &mut NoTools, &cfg);
            let hit = traj
                .messages
                .iter()
                .any(|m| matches!(&m.body, Body::AgentText(t) if *t == winner));
            let result = RewardResult::from_flags(vec![hit]);
            group.rewards.push(result.reward);
            group.results.push(result);
            group.trajectories.push(traj);
            group.completion_order.push(i);
        }
        Ok(group)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_success_fraction() {
        let (num, den, p) = toy_uniform_success_probability(30);
        assert_eq!((num, den), (21350398233460055, 576460752303423488));
        assert!(p <= 0.35);
        // Three steps only: exactly a, b, stop.
        assert_eq!(toy_uniform_success_probability(3).2, 1.0 / 64.0);
    }
}
