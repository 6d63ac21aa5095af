use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::engine::run_rollout;
use super::message::{Termination, Trajectory};
use super::{AgentPolicy, RolloutConfig, RolloutError, UserSimulator};
use crate::env::{DomainBundle, RewardResult, Task};

/// G sibling rollouts of one task, in rollout-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<u8>,
    pub results: Vec<RewardResult>,
    /// Rollout indices in the order they finished.
    pub completion_order: Vec<usize>,
}

/// The per-rollout roles handed out by a group's factory.
pub struct RolloutRoles {
    pub agent: Box<dyn AgentPolicy>,
    pub user: Box<dyn UserSimulator>,
}

/// Scores a finished trajectory. A protocol-error episode fails every check;
/// otherwise the final database (or the task's starting database when the
/// backend kept none) and the successful write calls decide. Tasks with
/// `require_stop` get one extra check for a stop-sentinel ending.
pub fn score_trajectory(bundle: &DomainBundle, task: &Task, traj: &Trajectory) -> RewardResult {
    let n = task.checks().len() + usize::from(task.require_stop);
    if traj.termination == Termination::ProtocolError {
        return RewardResult::from_flags(vec![false; n]);
    }
    let initial = bundle.database(&task.initial_db);
    let Some(db) = traj.final_db.as_ref().or(initial) else {
        return RewardResult::from_flags(vec![false; n]);
    };
    let mut flags = bundle.score_exchanges(task, db, traj.tool_exchanges()).satisfied;
    if task.require_stop {
        flags.push(traj.termination == Termination::Stop);
    }
    RewardResult::from_flags(flags)
}

/// Runs `cfg.group_size` independent rollouts of `task`, each on a fresh copy
/// of the task's starting database with roles from `roles(i)`.
pub fn run_group(
    bundle: &DomainBundle,
    task: &Task,
    cfg: &RolloutConfig,
    roles: &(dyn Fn(usize) -> RolloutRoles + Sync),
) -> Result<Group, RolloutError> {
    cfg.validate()?;
    // Fail early (and once) if the starting database is missing.
    bundle.instantiate(task)?;
    let one = |i: usize| -> (usize, Trajectory, RewardResult) {
        let RolloutRoles { mut agent, mut user } = roles(i);
        let mut env = bundle.instantiate(task).expect("checked above");
        let traj = run_rollout(task, agent.as_mut(), user.as_mut(), &mut env, cfg);
        let result = score_trajectory(bundle, task, &traj);
        (i, traj, result)
    };

    let g = cfg.group_size;
    let mut done: Vec<(usize, Trajectory, RewardResult)> = Vec::with_capacity(g);
    if cfg.parallel && g > 1 {
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|s| {
            for i in 0..g {
                let tx = tx.clone();
                let one = &one;
                s.spawn(move || {
                    // The receiver outlives the scope, so send cannot fail.
                    let _ = tx.send(one(i));
                });
            }
            drop(tx);
            done.extend(rx.iter());
        });
    } else {
        done.extend((0..g).map(one));
    }

    let completion_order = done.iter().map(|(i, ..)| *i).collect();
    done.sort_by_key(|(i, ..)| *i);
    let (mut trajectories, mut results) = (Vec::with_capacity(g), Vec::with_capacity(g));
    for (_, t, r) in done {
        trajectories.push(t);
        results.push(r);
    }
    Ok(Group {
        task_id: task.id.clone(),
        rewards: results.iter().map(|r: &RewardResult| r.reward).collect(),
        trajectories,
        results,
        completion_order,
    })
}
