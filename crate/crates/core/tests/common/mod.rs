//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use serde_json::Value;
use userloop::clients::{ScriptedUser, SentinelPolicy};
use userloop::env::{retail_domain, DomainBundle};
use userloop::rollout::{
    run_rollout, Body, RolloutConfig, ScriptStep, ScriptedAgent, ToolExecution, Trajectory, UserMode,
};

pub const RETAIL_TRAJECTORIES: &str = include_str!("../../fixtures/retail_earbuds_trajectories.json");

/// One recorded conversation of the earbuds task (`"correct"` or `"error"`).
pub fn recorded(which: &str) -> Vec<Body> {
    let doc: Value = serde_json::from_str(RETAIL_TRAJECTORIES).unwrap();
    serde_json::from_value(doc[which].clone()).unwrap()
}

/// Replays a recorded conversation against the live retail environment:
/// the agent repeats its recorded steps, the user its recorded lines, and
/// every tool result comes from the environment.
pub fn replay_retail(which: &str) -> (DomainBundle, Trajectory) {
    let bundle = retail_domain();
    let doc: Value = serde_json::from_str(RETAIL_TRAJECTORIES).unwrap();
    let task = bundle.task(doc["task_id"].as_str().unwrap()).unwrap().clone();
    let bodies = recorded(which);
    let mut lines = Vec::new();
    let mut steps = Vec::new();
    for b in bodies {
        match b {
            Body::User(t) => lines.push(t),
            Body::AgentText(t) => steps.push(ScriptStep::Text(t)),
            Body::ToolCall(c) => steps.push(ScriptStep::Calls(vec![c])),
            _ => {}
        }
    }
    let mut agent = ScriptedAgent::new(steps);
    let mut user = ScriptedUser::new(lines, SentinelPolicy::Stop).unwrap();
    let mut env = bundle.instantiate(&task).unwrap();
    let cfg = RolloutConfig {
        user_mode: UserMode::Scripted,
        tool_execution: ToolExecution::LocalEnv,
        ..RolloutConfig::default()
    };
    let traj = run_rollout(&task, &mut agent, &mut user, &mut env, &cfg);
    (bundle, traj)
}
