use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::advantage::{compute_advantages, DEFAULT_STD_FLOOR};
use super::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use super::objective::{grpo_objective, GroupSamples, ObjectiveConfig, SequenceSample};
use super::policy::{entropy, kl_term, PolicyParams};
use super::toy::{ActionTemplate, CategoricalAgent, ContextFn};
use super::GrpoError;
use crate::metrics::{all_correct_ratio, all_wrong_ratio, tool_counts, unique_4gram_ratio, MetricsRecord};
use crate::rollout::{tag_tokens, AgentPolicy, Group, RolloutConfig, RolloutError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub std_floor: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub group_size: usize,
    pub seed: u64,
    /// Gradient steps taken on each batch of rollouts.
    pub updates_per_step: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            kl_beta: 0.001,
            std_floor: DEFAULT_STD_FLOOR,
            learning_rate: 0.5,
            epochs: 25,
            batch_size: 32,
            group_size: 8,
            seed: 0,
            updates_per_step: 1,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.to_string()));
        if self.clip_epsilon.is_nan() || self.clip_epsilon <= 0.0 {
            return bad("clip_epsilon must be positive");
        }
        if self.kl_beta.is_nan() || self.kl_beta < 0.0 {
            return bad("kl_beta must be non-negative");
        }
        if self.std_floor.is_nan() || self.std_floor <= 0.0 {
            return bad("std_floor must be positive");
        }
        if !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite");
        }
        if self.batch_size == 0 || self.group_size == 0 || self.updates_per_step == 0 {
            return bad("batch_size, group_size and updates_per_step must be at least 1");
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            clip_epsilon: self.clip_epsilon,
            kl_beta: self.kl_beta,
        }
    }
}

/// An environment the trainer can roll the tabular policy out in.
pub trait TrainEnv: Sync {
    fn num_contexts(&self) -> usize;
    fn actions(&self) -> &[ActionTemplate];
    fn context_fn(&self) -> ContextFn;
    fn task_ids(&self) -> Vec<String>;
    /// Tool names whose per-rollout invocation counts are reported.
    fn tool_names(&self) -> Vec<String>;
    /// Runs one group of `cfg.group_size` rollouts of task `task`, with the
    /// agent for rollout `i` built by `agent(i)`.
    fn run_group(
        &self,
        task: usize,
        cfg: &RolloutConfig,
        agent: &(dyn Fn(usize) -> Box<dyn AgentPolicy> + Sync),
    ) -> Result<Group, RolloutError>;
}

/// Result of one optimization step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub metrics: MetricsRecord,
    pub groups: Vec<Group>,
}

/// Deterministic GRPO loop: every random choice derives from the seed, the
/// step counter, the task index and the rollout index.
pub struct Trainer<'e> {
    env: &'e dyn TrainEnv,
    cfg: GrpoConfig,
    rollout: RolloutConfig,
    params: PolicyParams,
    reference: Arc<PolicyParams>,
    step: u64,
}

impl<'e> Trainer<'e> {
    /// Starts from `init`, which also serves as the KL reference policy.
    pub fn new(
        env: &'e dyn TrainEnv,
        cfg: GrpoConfig,
        rollout: RolloutConfig,
        init: PolicyParams,
    ) -> Result<Self, GrpoError> {
        let reference = Arc::new(init.clone());
        Self::assemble(env, cfg, rollout, init, reference, 0)
    }

    pub fn from_checkpoint(env: &'e dyn TrainEnv, ckpt: Checkpoint) -> Result<Self, GrpoError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(GrpoError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let reference = Arc::new(ckpt.reference);
        Self::assemble(env, ckpt.config, ckpt.rollout, ckpt.params, reference, ckpt.step)
    }

    fn assemble(
        env: &'e dyn TrainEnv,
        cfg: GrpoConfig,
        mut rollout: RolloutConfig,
        params: PolicyParams,
        reference: Arc<PolicyParams>,
        step: u64,
    ) -> Result<Self, GrpoError> {
        cfg.validate()?;
        rollout.group_size = cfg.group_size;
        rollout.validate().map_err(|e| GrpoError::Config(e.to_string()))?;
        if params.num_contexts != env.num_contexts() || params.num_actions != env.actions().len() {
            return Err(GrpoError::Shape(format!(
                "policy is {}x{} but the environment needs {}x{}",
                params.num_contexts,
                params.num_actions,
                env.num_contexts(),
                env.actions().len()
            )));
        }
        if !params.same_shape(&reference) {
            return Err(GrpoError::Shape("policy and reference shapes differ".into()));
        }
        if env.task_ids().is_empty() {
            return Err(GrpoError::Config("no tasks to train on".into()));
        }
        Ok(Self {
            env,
            cfg,
            rollout,
            params,
            reference,
            step,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub fn config(&self) -> &GrpoConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    fn steps_per_epoch(&self) -> usize {
        self.env.task_ids().len().div_ceil(self.cfg.batch_size)
    }

    /// `epochs × ⌈tasks / batch_size⌉`.
    pub fn total_steps(&self) -> u64 {
        (self.cfg.epochs * self.steps_per_epoch()) as u64
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            step: self.step,
            seed: self.cfg.seed,
            config: self.cfg.clone(),
            rollout: self.rollout.clone(),
            params: self.params.clone(),
            reference: (*self.reference).clone(),
        }
    }

    /// Task indices for step `step`: each epoch visits every task once, in an
    /// order shuffled by (seed, epoch).
    fn batch(&self, step: u64) -> Vec<usize> {
        let n = self.env.task_ids().len();
        let spe = self.steps_per_epoch() as u64;
        let (epoch, j) = (step / spe, (step % spe) as usize);
        let mut order: Vec<usize> = (0..n).collect();
        // Streams counted down from the top never meet rollout streams.
        let mut rng = stream_rng(self.cfg.seed, u64::MAX - epoch);
        order.shuffle(&mut rng);
        let b = self.cfg.batch_size;
        order[j * b..((j + 1) * b).min(n)].to_vec()
    }

    /// Samples one group per task with `policy`; rollout `i` of task `t`
    /// draws from `rng(t, i)`.
    fn sample_groups(
        &self,
        policy: &Arc<PolicyParams>,
        tasks: &[usize],
        rollout: &RolloutConfig,
        rng: &(dyn Fn(usize, usize) -> ChaCha8Rng + Sync),
    ) -> Result<Vec<Group>, GrpoError> {
        let actions = Arc::new(self.env.actions().to_vec());
        let context = self.env.context_fn();
        let mut groups = Vec::with_capacity(tasks.len());
        for &t in tasks {
            let factory = |i: usize| -> Box<dyn AgentPolicy> {
                Box::new(CategoricalAgent::new(
                    policy.clone(),
                    self.reference.clone(),
                    actions.clone(),
                    context.clone(),
                    rng(t, i),
                ))
            };
            let group = self
                .env
                .run_group(t, rollout, &factory)
                .map_err(|e| GrpoError::Config(e.to_string()))?;
            groups.push(group);
        }
        Ok(groups)
    }

    /// One step: freeze the current policy as the sampling policy, roll out a
    /// group per batch task, then ascend the objective.
    pub fn step(&mut self) -> Result<StepOutcome, GrpoError> {
        let step = self.step;
        let old = Arc::new(self.params.clone());
        let tasks = self.batch(step);
        let (seed, g, n) = (
            self.cfg.seed,
            self.cfg.group_size as u64,
            self.env.task_ids().len() as u64,
        );
        let rng = |t: usize, i: usize| stream_rng(seed, (step * n + t as u64) * g + i as u64);
        let groups = self.sample_groups(&old, &tasks, &self.rollout, &rng)?;

        let mut batch = Vec::with_capacity(groups.len());
        for g in &groups {
            let mut samples = Vec::with_capacity(g.trajectories.len());
            for (traj, &r) in g.trajectories.iter().zip(&g.rewards) {
                let tagged = tag_tokens(traj).map_err(|e| GrpoError::Shape(e.to_string()))?;
                samples.push(SequenceSample {
                    query_id: g.task_id.clone(),
                    tokens: tagged.token_records,
                    reward: r,
                });
            }
            let rewards: Vec<f64> = g.rewards.iter().map(|&r| f64::from(r)).collect();
            batch.push(GroupSamples {
                samples,
                advantages: compute_advantages(&rewards, self.cfg.std_floor)?,
            });
        }

        let visited: Vec<usize> = batch
            .iter()
            .flat_map(|g| &g.samples)
            .flat_map(|s| s.masked().map(|t| t.context_id))
            .collect();
        let mean_entropy = entropy(&old, &visited);
        let kl_value = kl_term(&old, &self.reference, &visited)?;

        let obj_cfg = self.cfg.objective();
        let mut first = None;
        for _ in 0..self.cfg.updates_per_step {
            let out = grpo_objective(&batch, &self.params, &self.reference, &obj_cfg)?;
            if !out.objective.is_finite() || out.gradient.iter().any(|g| !g.is_finite()) {
                return Err(GrpoError::NonFinite {
                    sample: format!("step {step}"),
                });
            }
            self.params.add_scaled(&out.gradient, self.cfg.learning_rate);
            first.get_or_insert(out);
        }
        let first = first.expect("at least one update");
        self.step += 1;

        let metrics = step_metrics(
            step,
            &groups,
            &self.env.tool_names(),
            mean_entropy,
            kl_value,
            &first,
        );
        Ok(StepOutcome { metrics, groups })
    }

    /// Success rate of the current policy over `rollouts` fresh rollouts of
    /// task `task`, sampled at the configured temperature with `seed`.
    pub fn evaluate(&self, task: usize, rollouts: usize, seed: u64) -> Result<f64, GrpoError> {
        let policy = Arc::new(self.params.clone());
        let rollout = RolloutConfig {
            group_size: rollouts,
            ..self.rollout.clone()
        };
        let rng = |_: usize, i: usize| stream_rng(seed, i as u64);
        let groups = self.sample_groups(&policy, &[task], &rollout, &rng)?;
        let r = &groups[0].rewards;
        Ok(r.iter().map(|&x| f64::from(x)).sum::<f64>() / r.len() as f64)
    }
}

/// Independent ChaCha stream `stream` under `seed`.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn step_metrics(
    step: u64,
    groups: &[Group],
    tool_names: &[String],
    mean_entropy: f64,
    kl_value: f64,
    out: &super::objective::ObjectiveOutput,
) -> MetricsRecord {
    let trajectories: Vec<_> = groups
        .iter()
        .flat_map(|g| g.trajectories.iter().cloned())
        .collect();
    let n = trajectories.len().max(1) as f64;
    let rewards: Vec<Vec<u8>> = groups.iter().map(|g| g.rewards.clone()).collect();
    let names: Vec<&str> = tool_names.iter().map(String::as_str).collect();
    MetricsRecord {
        step,
        mean_entropy,
        kl_value,
        grad_norm: out.gradient.iter().map(|g| g * g).sum::<f64>().sqrt(),
        mean_turns: trajectories.iter().map(|t| t.num_turns() as f64).sum::<f64>() / n,
        mean_response_tokens: trajectories.iter().map(|t| t.agent_tokens() as f64).sum::<f64>() / n,
        unique_4gram_ratio: trajectories
            .iter()
            .map(|t| unique_4gram_ratio(&t.agent_action_ids()))
            .sum::<f64>()
            / n,
        all_correct_ratio: all_correct_ratio(&rewards).unwrap_or(0.0),
        all_wrong_ratio: all_wrong_ratio(&rewards).unwrap_or(0.0),
        tool_counts: tool_counts(&trajectories, &names).counts,
        mean_reward: rewards.iter().flatten().map(|&r| f64::from(r)).sum::<f64>() / n,
        objective: out.objective,
    }
}

/// Runs every step of the schedule from `init` and returns the final policy
/// with one metrics record per step.
pub fn train(
    env: &dyn TrainEnv,
    cfg: GrpoConfig,
    rollout: RolloutConfig,
    init: PolicyParams,
) -> Result<(PolicyParams, Vec<MetricsRecord>), GrpoError> {
    let mut trainer = Trainer::new(env, cfg, rollout, init)?;
    let mut records = Vec::new();
    while !trainer.is_done() {
        records.push(trainer.step()?.metrics);
    }
    Ok((trainer.params, records))
}
