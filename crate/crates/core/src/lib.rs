//! Multi-turn tool-calling agents trained from user interaction.
//!
//! * [`env`] — deterministic tool environments, tasks and outcome scoring.
//! * [`rollout`] — the agent / user / environment episode loop.
//! * [`grpo`] — group-relative policy optimization on a tabular policy.
//! * [`clients`] — chat-completions transport, model-backed roles, mocks.
//! * [`metrics`] — training-dynamics metrics and the metrics log.
//! * [`synth`] — cold-start trajectory synthesis, verification and export.

pub mod clients;
pub mod env;
pub mod grpo;
pub mod metrics;
pub mod rollout;
pub mod synth;
