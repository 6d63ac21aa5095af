//! Cold-start data synthesis.
//!
//! Three roles (agent, user, tool) converse over a scenario; tool results
//! come from a tool-role model or interpreter over a small generated
//! database, or from a remote executor. Conversations then pass rule checks
//! and a judge before being exported as an SFT corpus.

mod export;
mod memory;
mod pipeline;
mod replay;
mod scenario;
mod toolsim;
mod verify;

use thiserror::Error;

pub use export::{export_sft, import_sft, SftRecord};
pub use memory::{
    generate_memory, validate_memory, MemoryConfig, Provenance, SyntheticMemory, MEMORY_GENERATOR_VERSION,
};
pub use pipeline::{scenario_task, synthesize_trajectory, SynthTrajectory, Verdict};
pub use replay::{
    run_replay, ReplayFixture, ReplayServers, ReplayToolMode, ANILIST_REPLAY, UNIVERSITY_REPLAY,
};
pub use scenario::{handler_table, FieldSchema, Scenario, TableSchema};
pub use toolsim::{
    database_from_view, memory_view, parse_tool_reply, simulate_tool, LlmToolModel, SimulatedTools,
    ToolPromptTemplate, ToolSimBackend, TOOL_PROMPT_TEMPLATE,
};
pub use verify::{
    check_rules, dual_verify, render_transcript, Judge, JudgeTemplate, LlmJudge, RuleSet,
    JUDGE_PROMPT_TEMPLATE, RULES_V1,
};

use crate::clients::ClientError;

/// The bundled retail synthesis scenario.
pub const RETAIL_SCENARIO: &str = include_str!("../../fixtures/synth/retail_scenario.json");

pub fn retail_scenario() -> Scenario {
    Scenario::parse(RETAIL_SCENARIO).expect("bundled scenario is valid")
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("failed to parse document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsatisfiable schema constraints: {0}")]
    Unsatisfiable(String),
    #[error("memory does not match its schemas: {0}")]
    InvalidMemory(String),
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("invalid arguments for {tool}: {reason}")]
    InvalidArguments { tool: String, reason: String },
    #[error("tool {0} has no interpreter semantics; use the model backend")]
    NoInterpreter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trajectory is already {0:?}")]
    AlreadyVerified(Verdict),
    #[error("trajectory {index} is {verdict:?}; only accepted trajectories can be exported")]
    NotAccepted { index: usize, verdict: Verdict },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("I/O on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}
