//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Every expected value is computed here, independently of
//! the library code under test.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use userloop::env::{retail_domain, score_exchanges, Database, Task, ToolCall, VerificationCriterion};
use userloop::grpo::{
    compute_advantages, grpo_objective, AdvantageSet, Checkpoint, GroupSamples, GrpoConfig, ObjectiveConfig,
    PolicyParams, SequenceSample, TokenRecord, ToyToolEnv, TrainEnv, Trainer,
};
use userloop::metrics::{all_correct_ratio, all_wrong_ratio, tool_counts, unique_4gram_ratio, MetricsWriter};
use userloop::rollout::{
    run_group, run_rollout, score_trajectory, Body, FuzzAgent, Message, NoTools, NoUser, Role, RoleError,
    RolloutConfig, RolloutRoles, ScriptStep, ScriptedAgent, ToolExecution, Trajectory, UserMode,
    UserSimulator, UserView,
};
use userloop::synth::{
    export_sft, import_sft, run_replay, ReplayFixture, RuleSet, Verdict, ANILIST_REPLAY, UNIVERSITY_REPLAY,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Reference GRPO objective (written from the formula, not the library).

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
    row.iter().map(|x| x - m - z.ln()).collect()
}

fn reference_objective(
    groups: &[GroupSamples],
    logits: &[f64],
    reference: &[f64],
    a: usize,
    eps: f64,
    beta: f64,
) -> f64 {
    let row = |l: &[f64], c: usize| log_softmax(&l[c * a..(c + 1) * a]);
    let mut total = 0.0;
    for g in groups {
        let mut group_sum = 0.0;
        for (s, &adv) in g.samples.iter().zip(&g.advantages.advantages) {
            let masked: Vec<_> = s.tokens.iter().filter(|t| t.mask).collect();
            let log_ratio: f64 = masked
                .iter()
                .map(|t| row(logits, t.context_id)[t.action_id] - t.logprob_old)
                .sum();
            let rho = log_ratio.exp();
            let surrogate = (rho * adv).min(rho.clamp(1.0 - eps, 1.0 + eps) * adv);
            let kl = if masked.is_empty() {
                0.0
            } else {
                masked
                    .iter()
                    .map(|t| {
                        let p = row(logits, t.context_id);
                        let q = row(reference, t.context_id);
                        p.iter().zip(&q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum::<f64>()
                    })
                    .sum::<f64>()
                    / masked.len() as f64
            };
            group_sum += surrogate - beta * kl;
        }
        total += group_sum / g.samples.len() as f64;
    }
    total / groups.len() as f64
}

fn oracle_advantages(rewards: &[f64]) -> AdvantageSet {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = std < 1e-6;
    AdvantageSet {
        advantages: rewards
            .iter()
            .map(|r| if degenerate { 0.0 } else { (r - mean) / std })
            .collect(),
        mean_r: mean,
        std_r: std,
        degenerate,
    }
}

struct Instance {
    theta: PolicyParams,
    reference: PolicyParams,
    groups: Vec<GroupSamples>,
    cfg: ObjectiveConfig,
}

/// A random instance whose sequence ratios straddle the clip range. Ratios
/// within `kink_margin` of a clip boundary are redrawn.
fn random_instance(rng: &mut ChaCha8Rng, kink_margin: f64) -> Instance {
    let contexts = rng.gen_range(3..=5);
    let actions = rng.gen_range(3..=6);
    let n_groups = rng.gen_range(2..=4);
    let g = [2usize, 4, 8][rng.gen_range(0..3)];
    let beta = [0.0, 0.001, 0.1][rng.gen_range(0..3)];
    let eps = 0.2;
    let theta = PolicyParams {
        num_contexts: contexts,
        num_actions: actions,
        logits: (0..contexts * actions)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect(),
    };
    let reference = PolicyParams {
        num_contexts: contexts,
        num_actions: actions,
        logits: (0..contexts * actions)
            .map(|_| rng.gen_range(-1.5..1.5))
            .collect(),
    };
    let mut groups = Vec::new();
    for q in 0..n_groups {
        let mut samples = Vec::new();
        for _ in 0..g {
            loop {
                let len = rng.gen_range(1..=5);
                let mut tokens = Vec::new();
                let mut log_ratio = 0.0;
                for _ in 0..len {
                    let c = rng.gen_range(0..contexts);
                    let a = rng.gen_range(0..actions);
                    let lp = log_softmax(&theta.logits[c * actions..(c + 1) * actions])[a];
                    let mask = rng.gen_bool(0.75);
                    let old = lp + rng.gen_range(-0.2..0.2);
                    if mask {
                        log_ratio += lp - old;
                    }
                    tokens.push(TokenRecord {
                        context_id: c,
                        action_id: a,
                        logprob_old: old,
                        logprob_ref: 0.0,
                        mask,
                    });
                }
                let rho = f64::exp(log_ratio);
                if (rho - (1.0 - eps)).abs() > kink_margin && (rho - (1.0 + eps)).abs() > kink_margin {
                    samples.push(SequenceSample {
                        query_id: format!("q{q}"),
                        tokens,
                        reward: u8::from(rng.gen_bool(0.5)),
                    });
                    break;
                }
            }
        }
        let rewards: Vec<f64> = samples.iter().map(|s| f64::from(s.reward)).collect();
        groups.push(GroupSamples {
            samples,
            advantages: oracle_advantages(&rewards),
        });
    }
    Instance {
        theta,
        reference,
        groups,
        cfg: ObjectiveConfig {
            clip_epsilon: eps,
            kl_beta: beta,
        },
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut clipped_seen = 0.0;
    for i in 0..24 {
        let inst = random_instance(&mut rng, 1e-3);
        let out = grpo_objective(&inst.groups, &inst.theta, &inst.reference, &inst.cfg)
            .map_err(|e| e.to_string())?;
        let a = inst.theta.num_actions;
        let f = |l: &[f64]| {
            reference_objective(
                &inst.groups,
                l,
                &inst.reference.logits,
                a,
                inst.cfg.clip_epsilon,
                inst.cfg.kl_beta,
            )
        };
        let value = f(&inst.theta.logits);
        ensure((value - out.objective).abs() < 1e-12, || {
            format!("instance {i}: objective {} vs reference {value}", out.objective)
        })?;
        let mut fd = vec![0.0; inst.theta.logits.len()];
        for k in 0..fd.len() {
            let mut plus = inst.theta.logits.clone();
            let mut minus = inst.theta.logits.clone();
            plus[k] += h;
            minus[k] -= h;
            fd[k] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        let diff = out
            .gradient
            .iter()
            .zip(&fd)
            .map(|(g, d)| (g - d).abs())
            .fold(0.0, f64::max);
        let scale = fd.iter().map(|d| d.abs()).fold(1e-8, f64::max);
        worst = worst.max(diff / scale);
        clipped_seen += out.clip_fraction;
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-5, || format!("max relative error {worst:.3e}"))?;
    ensure(clipped_seen > 0.0, || {
        "no instance exercised the clipped branch".into()
    })?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "24 instances, max relative error {worst:.2e}, {elapsed:.2?}"
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    let mut n = 0;
    while n < 10_000 {
        let g = rng.gen_range(2..=16);
        let rewards: Vec<f64> = if rng.gen_bool(0.5) {
            (0..g).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect()
        } else {
            (0..g).map(|_| rng.gen_range(-5.0..5.0)).collect()
        };
        let o = oracle_advantages(&rewards);
        if o.degenerate {
            continue;
        }
        n += 1;
        let set = compute_advantages(&rewards, 1e-6).map_err(|e| e.to_string())?;
        ensure(!set.degenerate, || format!("{rewards:?} flagged degenerate"))?;
        let a = &set.advantages;
        let m = a.iter().sum::<f64>() / g as f64;
        let s = (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / g as f64).sqrt();
        worst_mean = worst_mean.max(m.abs());
        worst_std = worst_std.max((s - 1.0).abs());
    }
    ensure(worst_mean < 1e-9 && worst_std < 1e-9, || {
        format!("mean dev {worst_mean:.2e}, std dev {worst_std:.2e}")
    })?;

    for _ in 0..200 {
        let mut inst = random_instance(&mut rng, 0.0);
        inst.cfg.kl_beta = 0.0;
        for group in &mut inst.groups {
            let r = rng.gen_range(0..=1);
            let rewards = vec![f64::from(r); group.samples.len()];
            group.advantages = compute_advantages(&rewards, 1e-6).map_err(|e| e.to_string())?;
            ensure(
                group.advantages.degenerate && group.advantages.advantages.iter().all(|&x| x == 0.0),
                || "equal rewards gave non-zero advantages".into(),
            )?;
        }
        let out = grpo_objective(&inst.groups, &inst.theta, &inst.reference, &inst.cfg)
            .map_err(|e| e.to_string())?;
        ensure(out.gradient.iter().all(|&x| x == 0.0), || {
            "non-zero gradient on equal-reward batch".into()
        })?;
    }
    Ok(format!("10000 groups: |mean| ≤ {worst_mean:.1e}, |std−1| ≤ {worst_std:.1e}; 200 equal-reward batches exactly zero"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut perturbed = 0;
    for _ in 0..200 {
        let inst = random_instance(&mut rng, 0.0);
        let base = grpo_objective(&inst.groups, &inst.theta, &inst.reference, &inst.cfg)
            .map_err(|e| e.to_string())?;
        let mut groups = inst.groups.clone();
        for g in &mut groups {
            for s in &mut g.samples {
                for t in s.tokens.iter_mut().filter(|t| !t.mask) {
                    t.logprob_old = rng.gen_range(-50.0..50.0);
                    t.logprob_ref = rng.gen_range(-50.0..50.0);
                    perturbed += 1;
                }
            }
        }
        let out =
            grpo_objective(&groups, &inst.theta, &inst.reference, &inst.cfg).map_err(|e| e.to_string())?;
        ensure(out.objective.to_bits() == base.objective.to_bits(), || {
            "objective changed".into()
        })?;
        ensure(
            out.gradient
                .iter()
                .zip(&base.gradient)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || "gradient changed".into(),
        )?;
    }
    Ok(format!(
        "200 instances, {perturbed} unmasked tokens perturbed, bitwise equal"
    ))
}

// ---------------------------------------------------------------------------

/// Exact success probability of uniformly random play on the toy task by
/// dynamic programming over (procedure stage, steps used).
fn uniform_baseline_dp(max_turns: usize) -> (u128, u128) {
    // mass[s] counts action sequences (out of 4^t) currently at stage s.
    let mut mass = [1u128, 0, 0];
    let mut success = 0u128;
    let mut den = 1u128;
    for _ in 0..max_turns {
        let mut next = [0u128; 3];
        for s in 0..3 {
            next[s] += mass[s]; // think
            if s < 2 {
                next[s + 1] += mass[s]; // the right tool
            }
        }
        success = success * 4 + mass[2]; // stop at the right time
        mass = next;
        den *= 4;
    }
    let g = gcd(success, den);
    (success / g, den / g)
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let env = ToyToolEnv::new();
    let rollout = RolloutConfig::default();
    let (num, den) = uniform_baseline_dp(rollout.max_turns);
    let p0 = num as f64 / den as f64;
    let (lib_num, lib_den, _) = userloop::grpo::toy_uniform_success_probability(rollout.max_turns);
    ensure((lib_num, lib_den) == (num, den), || {
        format!("library baseline {lib_num}/{lib_den} vs oracle {num}/{den}")
    })?;
    ensure(p0 <= 0.35, || format!("baseline {p0}"))?;

    let cfg = GrpoConfig {
        batch_size: env.task_ids().len(),
        epochs: 500,
        ..GrpoConfig::default()
    };
    let init = PolicyParams::uniform(env.num_contexts(), env.actions().len());
    let mut trainer = Trainer::new(&env, cfg, rollout, init).map_err(|e| e.to_string())?;

    // The uniform policy, measured on the live environment, agrees with the oracle.
    let m = 20_000;
    let measured = trainer.evaluate(0, m, 0xba5e).map_err(|e| e.to_string())?;
    let sigma = (p0 * (1.0 - p0) / m as f64).sqrt();
    ensure((measured - p0).abs() < 5.0 * sigma, || {
        format!("uniform policy measured {measured:.4}, oracle {p0:.4}")
    })?;

    let mut success = 0.0;
    while !trainer.is_done() {
        trainer.step().map_err(|e| e.to_string())?;
        if trainer.step_index() % 10 == 0 {
            success = trainer
                .evaluate(0, 256, 0xe7a1 + trainer.step_index())
                .map_err(|e| e.to_string())?;
            if success >= 0.95 {
                break;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(success >= 0.95, || {
        format!("success {success:.3} after {} steps", trainer.step_index())
    })?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "baseline {num}/{den} ≈ {p0:.4}; {success:.3} success after {} steps ({elapsed:.2?})",
        trainer.step_index()
    ))
}

// ---------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let (bundle, good) = common::replay_retail("correct");
    let task = bundle.task("retail_earbuds_blue").ok_or("missing task")?;
    let r = score_trajectory(&bundle, task, &good);
    ensure(r.reward == 1, || {
        format!("correct trajectory scored {:?}", r.satisfied)
    })?;
    let (_, bad) = common::replay_retail("error");
    let e = score_trajectory(&bundle, task, &bad);
    ensure(e.reward == 0 && e.tcr > 0.0 && e.tcr < 1.0, || {
        format!("error trajectory: reward {}, tcr {}", e.reward, e.tcr)
    })?;

    let registry = retail_domain().registry().clone();
    for n in [1usize, 4, 10] {
        for k in 0..=n {
            let mut record = serde_json::Map::new();
            let mut criteria = Vec::new();
            for i in 0..n {
                record.insert(format!("c{i}"), json!(i < k));
                criteria.push(VerificationCriterion::DbPathEquals {
                    target: format!("flags.x.c{i}"),
                    expected: json!(true),
                });
            }
            let db = Database::from_tables(BTreeMap::from([(
                "flags".to_string(),
                BTreeMap::from([("x".to_string(), serde_json::Value::Object(record))]),
            )]));
            let task = Task {
                id: "kn".into(),
                domain_id: "kn".into(),
                system_policy: String::new(),
                user_scenario: String::new(),
                initial_db: "base".into(),
                criteria,
                required_write_actions: None,
                user_script: Vec::new(),
                require_stop: false,
            };
            let r = score_exchanges(&task, &db, &registry, std::iter::empty());
            ensure(r.tcr_ratio() == (k, n) && r.tcr == k as f64 / n as f64, || {
                format!("k={k} n={n}: tcr {:?}", r.tcr_ratio())
            })?;
        }
    }
    Ok(format!(
        "correct → reward 1; error → reward 0, TCR {}/{}; k-of-n exact",
        e.tcr_ratio().0,
        e.tcr_ratio().1
    ))
}

/// A user that never ends the conversation.
struct ChattyUser;

impl UserSimulator for ChattyUser {
    fn open(&mut self, task: &Task) -> Result<String, RoleError> {
        Ok(task.user_scenario.clone())
    }

    fn reply(&mut self, _: &UserView<'_>) -> Result<String, RoleError> {
        Ok("Please go on.".into())
    }
}

fn criterion_6() -> Outcome {
    let bundle = retail_domain();
    let pool = vec![
        json!({}),
        json!({"user_id": "chen_johnson_4204"}),
        json!({"order_id": "#W5061109"}),
        json!({"order_id": "#W5061109", "reason": "no longer needed"}),
        json!({"order_id": "#W5061109", "item_ids": ["3694871183"], "new_item_ids": ["6077640618"], "payment_method_id": "paypal_3742148"}),
        json!({"expression": "256.67 - 242.92"}),
        json!({"thought": "hmm"}),
    ];
    let tasks = bundle.tasks().to_vec();
    let mut max_turns_seen = 0;
    let mut episodes = 0;
    for (i, cap) in [(0u64, 32768usize), (1, 4000), (2, 600)]
        .into_iter()
        .flat_map(|(s, c)| (0..334).map(move |k| (s * 1000 + k, c)))
    {
        if episodes == 1000 {
            break;
        }
        let task = &tasks[(i as usize) % tasks.len()];
        let cfg = RolloutConfig {
            max_tokens: cap,
            user_mode: UserMode::Llm,
            ..RolloutConfig::default()
        };
        let mut agent = FuzzAgent::new(i).with_arguments(pool.clone());
        let mut env = bundle.instantiate(task).map_err(|e| e.to_string())?;
        let traj = run_rollout(task, &mut agent, &mut ChattyUser, &mut env, &cfg);
        ensure(traj.num_turns() <= 30, || {
            format!("episode {i}: {} turns", traj.num_turns())
        })?;
        let tokens: usize = traj.messages.iter().map(|m| m.token_count).sum();
        ensure(tokens <= cap, || format!("episode {i}: {tokens} tokens > {cap}"))?;
        max_turns_seen = max_turns_seen.max(traj.num_turns());
        episodes += 1;
    }

    let mut groups = 0;
    let mut checked = 0;
    for (gi, task) in tasks.iter().enumerate() {
        let initial = bundle
            .database(&task.initial_db)
            .ok_or("missing db")?
            .content_hash();
        for rep in 0..3u64 {
            let cfg = RolloutConfig {
                group_size: 8,
                user_mode: UserMode::Llm,
                ..RolloutConfig::default()
            };
            let pool = pool.clone();
            let roles = move |i: usize| RolloutRoles {
                agent: Box::new(
                    FuzzAgent::new(10_000 + rep * 100 + (gi * 8 + i) as u64).with_arguments(pool.clone()),
                ),
                user: Box::new(ChattyUser),
            };
            let group = run_group(&bundle, task, &cfg, &roles).map_err(|e| e.to_string())?;
            groups += 1;
            for t in &group.trajectories {
                let wrote = t
                    .tool_exchanges()
                    .any(|(c, r)| r.is_ok() && bundle.registry().get(&c.name).is_some_and(|s| s.mutating));
                if !wrote {
                    let h = t.final_db.as_ref().ok_or("no final db")?.content_hash();
                    ensure(h == initial, || {
                        format!("mutation-free sibling in {} changed the db", task.id)
                    })?;
                    checked += 1;
                }
            }
        }
    }
    ensure(checked > 0, || "no mutation-free rollouts to check".into())?;
    Ok(format!(
        "{episodes} fuzz episodes (max {max_turns_seen} turns); {groups} groups of 8, {checked} mutation-free siblings at initial hash"
    ))
}

fn criterion_7() -> Outcome {
    let bundle = retail_domain();
    let task = bundle.tasks()[0].clone();
    let text_cfg = RolloutConfig {
        user_mode: UserMode::None,
        tool_execution: ToolExecution::None,
        ..RolloutConfig::default()
    };
    let mut agent = ScriptedAgent::new([ScriptStep::Text("Here is my answer.".into())]);
    let t = run_rollout(&task, &mut agent, &mut NoUser, &mut NoTools, &text_cfg);
    ensure(t.count_role(Role::AgentText) == 1, || {
        format!("{} agent texts", t.count_role(Role::AgentText))
    })?;
    ensure(
        t.count_role(Role::ToolCall) == 0 && t.count_role(Role::User) == 1,
        || "unexpected roles".into(),
    )?;

    let multi_cfg = RolloutConfig {
        user_mode: UserMode::None,
        tool_execution: ToolExecution::LocalEnv,
        ..RolloutConfig::default()
    };
    let mut agent = ScriptedAgent::new([
        ScriptStep::Calls(vec![ToolCall::new(
            "find_user_id_by_name_zip",
            json!({"first_name": "Chen", "last_name": "Johnson", "zip": "77004"}),
        )]),
        ScriptStep::Calls(vec![ToolCall::new(
            "get_order_details",
            json!({"order_id": "#W5061109"}),
        )]),
        ScriptStep::Text("Your order is pending.".into()),
    ]);
    let mut env = bundle.instantiate(&task).map_err(|e| e.to_string())?;
    let m = run_rollout(&task, &mut agent, &mut NoUser, &mut env, &multi_cfg);
    ensure(m.count_role(Role::ToolCall) == 2, || {
        format!("{} tool calls", m.count_role(Role::ToolCall))
    })?;
    ensure(m.count_role(Role::User) == 1, || {
        format!("{} user messages", m.count_role(Role::User))
    })?;
    Ok("text-only: 1 agent_text; multi-step: 2 tool calls, seed user message only".into())
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles.

fn brute_4gram(tokens: &[u32]) -> f64 {
    if tokens.len() < 4 {
        return 1.0;
    }
    let windows: Vec<&[u32]> = (0..=tokens.len() - 4).map(|i| &tokens[i..i + 4]).collect();
    let mut distinct = 0;
    for (i, w) in windows.iter().enumerate() {
        if !windows[..i].contains(w) {
            distinct += 1;
        }
    }
    distinct as f64 / windows.len() as f64
}

fn brute_tool_counts(trajs: &[Trajectory], names: &[&str]) -> HashMap<String, f64> {
    let mut out = HashMap::new();
    for name in names {
        let mut total = 0usize;
        for t in trajs {
            for m in &t.messages {
                if let Body::ToolCall(c) = &m.body {
                    if c.name == *name {
                        total += 1;
                    }
                }
            }
        }
        out.insert(name.to_string(), total as f64 / trajs.len() as f64);
    }
    out
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    let names = ["alpha", "beta", "gamma"];
    for i in 0..1000 {
        let len = rng.gen_range(0..60);
        let alphabet = rng.gen_range(1..6);
        let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..alphabet)).collect();
        let (got, want) = (unique_4gram_ratio(&tokens), brute_4gram(&tokens));
        ensure((got - want).abs() < 1e-12, || {
            format!("input {i}: 4-gram {got} vs {want}")
        })?;

        let groups = rng.gen_range(1..8);
        let g = rng.gen_range(1..6);
        let rewards: Vec<Vec<u8>> = (0..groups)
            .map(|_| (0..g).map(|_| u8::from(rng.gen_bool(0.6))).collect())
            .collect();
        let correct = rewards.iter().filter(|r| r.iter().all(|&x| x == 1)).count() as f64 / groups as f64;
        let wrong = rewards.iter().filter(|r| r.iter().all(|&x| x == 0)).count() as f64 / groups as f64;
        let c = all_correct_ratio(&rewards).map_err(|e| e.to_string())?;
        let w = all_wrong_ratio(&rewards).map_err(|e| e.to_string())?;
        ensure((c - correct).abs() < 1e-12 && (w - wrong).abs() < 1e-12, || {
            format!("input {i}: ratios")
        })?;

        let trajs: Vec<Trajectory> = (0..rng.gen_range(1..6))
            .map(|k| {
                let mut t = Trajectory::new(format!("t{k}"));
                for _ in 0..rng.gen_range(0..8) {
                    let name = ["alpha", "beta", "gamma", "delta"][rng.gen_range(0..4)];
                    t.messages
                        .push(Message::new(Body::ToolCall(ToolCall::new(name, json!({}))), 0, 1));
                    t.messages.push(Message::new(Body::AgentText("x".into()), 0, 1));
                }
                t
            })
            .collect();
        let got = tool_counts(&trajs, &names);
        let want = brute_tool_counts(&trajs, &names);
        ensure(got.samples == trajs.len(), || "sample count".into())?;
        for n in names {
            ensure((got.counts[n] - want[n]).abs() < 1e-12, || {
                format!("input {i}: count of {n}")
            })?;
        }
    }
    Ok("1000 random inputs per metric match brute force".into())
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut accepted = Vec::new();
    for (name, doc) in [("university", UNIVERSITY_REPLAY), ("anilist", ANILIST_REPLAY)] {
        let fx = ReplayFixture::parse(doc).map_err(|e| e.to_string())?;
        let traj = run_replay(&fx, "ACCEPT consistent with the policy", &RuleSet::v1())
            .map_err(|e| e.to_string())?;
        ensure(traj.verdict == Verdict::Accepted, || {
            format!("{name}: {:?} ({})", traj.verdict, traj.judge_rationale)
        })?;
        let produced: Vec<&Body> = traj.messages.iter().skip(1).map(|m| &m.body).collect();
        ensure(produced.len() == fx.transcript.len(), || {
            format!("{name}: {} messages vs {}", produced.len(), fx.transcript.len())
        })?;
        for (i, (p, want)) in produced.iter().zip(&fx.transcript).enumerate() {
            ensure(*p == want, || format!("{name}: message {i} differs"))?;
        }
        accepted.push(traj);
    }
    let path = dir.path().join("corpus.jsonl");
    let n = export_sft(&accepted, &path).map_err(|e| e.to_string())?;
    let back = import_sft(&path).map_err(|e| e.to_string())?;
    ensure(n == 2 && back == accepted, || {
        "export → import is not lossless".into()
    })?;
    Ok("university and anilist replays accepted, message-for-message; round trip lossless".into())
}

fn train_once(dir: &std::path::Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let env = ToyToolEnv::new();
    let cfg = GrpoConfig {
        epochs: 20,
        seed: 17,
        batch_size: 1,
        ..GrpoConfig::default()
    };
    let init = PolicyParams::uniform(env.num_contexts(), env.actions().len());
    let mut trainer = Trainer::new(&env, cfg, RolloutConfig::default(), init).map_err(|e| e.to_string())?;
    let metrics = dir.join("metrics.jsonl");
    let mut writer = MetricsWriter::open(&metrics).map_err(|e| e.to_string())?;
    while !trainer.is_done() {
        let out = trainer.step().map_err(|e| e.to_string())?;
        writer.append(&out.metrics).map_err(|e| e.to_string())?;
    }
    drop(writer);
    let ckpt = dir.join("checkpoint.json");
    trainer.checkpoint().save(&ckpt).map_err(|e| e.to_string())?;
    Checkpoint::load(&ckpt).map_err(|e| e.to_string())?;
    Ok((
        std::fs::read(&metrics).map_err(|e| e.to_string())?,
        std::fs::read(&ckpt).map_err(|e| e.to_string())?,
    ))
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ma, ca) = train_once(a.path())?;
    let (mb, cb) = train_once(b.path())?;
    ensure(!ma.is_empty() && ma == mb, || "metrics differ".into())?;
    ensure(ca == cb, || "checkpoints differ".into())?;
    Ok(format!(
        "{} metrics bytes, {} checkpoint bytes identical",
        ma.len(),
        ca.len()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("GRPO gradient matches finite differences", criterion_1),
        ("advantage normalization and degenerate groups", criterion_2),
        ("loss mask has no effect on unmasked tokens", criterion_3),
        ("toy tool task is learned from the uniform baseline", criterion_4),
        ("reward and TCR scoring", criterion_5),
        ("rollout budgets and sibling isolation", criterion_6),
        ("single-turn and multi-step degenerate paradigms", criterion_7),
        ("metrics match brute-force oracles", criterion_8),
        ("synthesis replay fidelity and lossless export", criterion_9),
        ("training is bitwise deterministic", criterion_10),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2}: {name} — {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name} — {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
