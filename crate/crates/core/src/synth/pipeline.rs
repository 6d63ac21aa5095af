use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::scenario::Scenario;
use super::SynthError;
use crate::env::Task;
use crate::rollout::{
    run_rollout, AgentPolicy, Message, RolloutConfig, Termination, ToolBackend, ToolExecution, UserSimulator,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    #[default]
    Unverified,
    Accepted,
    Rejected,
}

/// A synthesized conversation and its verification state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTrajectory {
    pub scenario_id: String,
    pub messages: Vec<Message>,
    pub termination: Termination,
    /// Function declarations offered to the agent.
    #[serde(default)]
    pub tools: Vec<Value>,
    #[serde(default)]
    pub verdict: Verdict,
    #[serde(default)]
    pub judge_rationale: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rule_violations: Vec<String>,
}

/// The rollout task for a scenario: its policy as the system prompt and the
/// given (or first) seed query as the user's instruction. Synthesis tasks
/// carry no success criteria.
pub fn scenario_task(scenario: &Scenario, query: Option<&str>) -> Task {
    Task {
        id: scenario.id.clone(),
        domain_id: scenario.id.clone(),
        system_policy: scenario.domain_policy.clone(),
        user_scenario: query
            .or(scenario.seed_queries.first().map(String::as_str))
            .unwrap_or_default()
            .to_string(),
        initial_db: "base".into(),
        criteria: Vec::new(),
        required_write_actions: None,
        user_script: Vec::new(),
        require_stop: false,
    }
}

/// Runs one agent/user/tool conversation for `scenario`. The result is
/// unverified, unless the rollout broke protocol, in which case it is kept
/// and marked rejected.
pub fn synthesize_trajectory(
    scenario: &Scenario,
    agent: &mut dyn AgentPolicy,
    user: &mut dyn UserSimulator,
    tools: &mut dyn ToolBackend,
    cfg: &RolloutConfig,
) -> Result<SynthTrajectory, SynthError> {
    if !matches!(
        cfg.tool_execution,
        ToolExecution::LlmSimulated | ToolExecution::RemoteExecutor
    ) {
        return Err(SynthError::Config(
            "synthesis needs tool_execution = llm_simulated or remote_executor".into(),
        ));
    }
    cfg.validate().map_err(|e| SynthError::Config(e.to_string()))?;
    let task = scenario_task(scenario, None);
    let traj = run_rollout(&task, agent, user, tools, cfg);
    let mut out = SynthTrajectory {
        scenario_id: scenario.id.clone(),
        messages: traj.messages,
        termination: traj.termination,
        tools: tools
            .tool_specs()
            .iter()
            .map(|t| t.function_declaration())
            .collect(),
        verdict: Verdict::Unverified,
        judge_rationale: String::new(),
        rule_violations: Vec::new(),
    };
    if traj.termination == Termination::ProtocolError {
        out.verdict = Verdict::Rejected;
        out.judge_rationale = format!(
            "rollout ended with a protocol error: {}",
            traj.error.as_deref().unwrap_or("unspecified")
        );
    }
    Ok(out)
}
