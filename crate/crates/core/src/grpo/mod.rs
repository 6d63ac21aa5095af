//! Group-relative policy optimization on a tabular softmax policy.
//!
//! The policy is small enough that every quantity is exact: log-probabilities,
//! the categorical KL to the reference policy, and the analytic gradient of
//! the clipped objective. That makes the optimizer checkable against finite
//! differences and the trainer checkable against enumerated toy tasks.

mod advantage;
mod checkpoint;
mod objective;
mod policy;
mod toy;
mod trainer;

use thiserror::Error;

pub use advantage::{compute_advantages, AdvantageSet, DEFAULT_STD_FLOOR};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use objective::{
    clipped_surrogate, grpo_objective, sequence_ratio, GroupSamples, ObjectiveConfig, ObjectiveOutput,
    SequenceSample,
};
pub use policy::{entropy, kl_row, kl_term, PolicyParams, TokenRecord};
pub use toy::{
    toy_domain, toy_uniform_success_probability, ActionTemplate, BanditEnv, CategoricalAgent, ContextFn,
    ToyToolEnv, TOY_DOMAIN,
};
pub use trainer::{train, GrpoConfig, StepOutcome, TrainEnv, Trainer};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("empty reward group")]
    EmptyGroup,
    #[error("context {context} / action {action} outside the policy table")]
    OutOfRange { context: usize, action: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite objective term in sample {sample}")]
    NonFinite { sample: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
