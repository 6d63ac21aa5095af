//! Fully mocked synthesis runs that replay a recorded conversation.
//!
//! A replay fixture holds a scenario and a transcript. Every role is served
//! by a loopback mock that answers with the transcript's lines in order: the
//! agent and user models, the tool side (a tool-role model or a JSON-RPC
//! executor, per `tool_mode`), and a judge with a fixed reply.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::memory::{generate_memory, MemoryConfig};
use super::pipeline::{synthesize_trajectory, SynthTrajectory};
use super::scenario::Scenario;
use super::toolsim::{LlmToolModel, SimulatedTools, ToolPromptTemplate, ToolSimBackend};
use super::verify::{dual_verify, JudgeTemplate, LlmJudge, RuleSet};
use super::SynthError;
use crate::clients::{
    replay_executor, text_body, tool_calls_body, ChatClient, ClientConfig, LlmAgent, LlmUser, MockReply,
    MockServer, PromptTemplate, RemoteToolExecutor,
};
use crate::env::{ToolCall, ToolResult};
use crate::rollout::{Body, RolloutConfig, ToolBackend, ToolExecution, UserMode};

pub const UNIVERSITY_REPLAY: &str = include_str!("../../fixtures/synth/university_replay.json");
pub const ANILIST_REPLAY: &str = include_str!("../../fixtures/synth/anilist_replay.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayToolMode {
    LlmSimulated,
    RemoteExecutor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFixture {
    pub scenario: Scenario,
    pub tool_mode: ReplayToolMode,
    #[serde(default)]
    pub memory_seed: u64,
    /// The conversation after the system policy.
    pub transcript: Vec<Body>,
}

impl ReplayFixture {
    pub fn parse(json: &str) -> Result<Self, SynthError> {
        let f: Self = serde_json::from_str(json)?;
        f.scenario.validate()?;
        Ok(f)
    }

    pub fn user_lines(&self) -> Vec<String> {
        self.transcript
            .iter()
            .filter_map(|b| match b {
                Body::User(s) => Some(s.clone()),
                _ => None,
            })
            .collect()
    }

    /// Chat-completions bodies for the agent's steps, one call per step.
    pub fn agent_bodies(&self) -> Vec<Value> {
        self.transcript
            .iter()
            .filter_map(|b| match b {
                Body::AgentText(s) => Some(text_body(s)),
                Body::ToolCall(c) => Some(tool_calls_body(std::slice::from_ref(c))),
                _ => None,
            })
            .collect()
    }

    /// Each call paired with the result that follows it.
    pub fn tool_exchanges(&self) -> Vec<(ToolCall, ToolResult)> {
        self.transcript
            .windows(2)
            .filter_map(|w| match (&w[0], &w[1]) {
                (Body::ToolCall(c), Body::ToolResult(r)) => Some((c.clone(), r.clone())),
                _ => None,
            })
            .collect()
    }
}

/// The loopback servers of one replay; they stop when dropped.
pub struct ReplayServers {
    pub agent: MockServer,
    pub user: MockServer,
    pub tools: MockServer,
    pub judge: MockServer,
}

impl ReplayServers {
    pub fn start(fixture: &ReplayFixture, judge_reply: &str) -> Result<Self, SynthError> {
        let canned = |bodies: Vec<Value>| MockServer::canned(bodies.into_iter().map(MockReply::Json));
        let tools = match fixture.tool_mode {
            ReplayToolMode::LlmSimulated => canned(
                fixture
                    .tool_exchanges()
                    .iter()
                    .map(|(_, r)| match r {
                        ToolResult::Ok(v) => text_body(&v.to_string()),
                        err => text_body(&serde_json::to_string(err).expect("results serialize")),
                    })
                    .collect(),
            )?,
            ReplayToolMode::RemoteExecutor => {
                replay_executor(fixture.scenario.tools.clone(), fixture.tool_exchanges())?
            }
        };
        Ok(Self {
            agent: canned(fixture.agent_bodies())?,
            user: canned(fixture.user_lines().iter().map(|l| text_body(l)).collect())?,
            tools,
            judge: canned(vec![text_body(judge_reply)])?,
        })
    }
}

fn client(server: &MockServer) -> Result<ChatClient, SynthError> {
    Ok(ChatClient::new(ClientConfig::local(server.url()))?)
}

/// Synthesizes and verifies one trajectory against the fixture's mocks.
pub fn run_replay(
    fixture: &ReplayFixture,
    judge_reply: &str,
    rules: &RuleSet,
) -> Result<SynthTrajectory, SynthError> {
    let servers = ReplayServers::start(fixture, judge_reply)?;
    let mut agent = LlmAgent::new(client(&servers.agent)?, "replay-agent", 1024);
    let mut user = LlmUser::new(client(&servers.user)?, "replay-user", PromptTemplate::bundled());
    let (mut tools, tool_execution): (Box<dyn ToolBackend>, _) = match fixture.tool_mode {
        ReplayToolMode::LlmSimulated => {
            let memory = generate_memory(&fixture.scenario, fixture.memory_seed, &MemoryConfig::default())?;
            let model = LlmToolModel::new(
                client(&servers.tools)?,
                "replay-tool",
                ToolPromptTemplate::bundled(),
            );
            (
                Box::new(SimulatedTools::new(
                    fixture.scenario.clone(),
                    memory,
                    ToolSimBackend::Llm(model),
                )),
                ToolExecution::LlmSimulated,
            )
        }
        ReplayToolMode::RemoteExecutor => (
            Box::new(RemoteToolExecutor::connect(ClientConfig::local(
                servers.tools.url(),
            ))?),
            ToolExecution::RemoteExecutor,
        ),
    };
    let cfg = RolloutConfig {
        user_mode: UserMode::Llm,
        tool_execution,
        ..RolloutConfig::default()
    };
    let mut traj = synthesize_trajectory(&fixture.scenario, &mut agent, &mut user, tools.as_mut(), &cfg)?;
    let judge = LlmJudge::new(client(&servers.judge)?, "replay-judge", JudgeTemplate::bundled());
    if traj.verdict == super::pipeline::Verdict::Unverified {
        dual_verify(&mut traj, rules, &judge)?;
    }
    Ok(traj)
}
