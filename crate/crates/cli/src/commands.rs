//! The subcommands. Each reads the resolved configuration, does its work, and
//! reports on stdout; artifact-producing commands also write a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::info;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use userloop::clients::{
    ChatClient, ClientConfig, LlmAgent, LlmUser, PromptTemplate, RemoteToolExecutor, ScriptedUser,
};
use userloop::env::{load_domain, retail_domain, DomainBundle, Task, RETAIL_DOMAIN};
use userloop::grpo::{CategoricalAgent, Checkpoint, PolicyParams, ToyToolEnv, TrainEnv, Trainer, TOY_DOMAIN};
use userloop::metrics::{all_correct_ratio, all_wrong_ratio, read_metrics, MetricsWriter};
use userloop::rollout::{
    read_trajectories, replay_trajectory, run_group, score_trajectory, write_trajectories, AgentPolicy,
    FuzzAgent, NoUser, RolloutConfig, RolloutRoles, Termination, ToolBackend, ToolExecution,
    TrajectoryRecord, UserMode, UserSimulator,
};
use userloop::synth::{
    dual_verify, export_sft, generate_memory, retail_scenario, run_replay, synthesize_trajectory,
    JudgeTemplate, LlmJudge, LlmToolModel, ReplayFixture, RuleSet, Scenario, SimulatedTools, SynthTrajectory,
    ToolPromptTemplate, ToolSimBackend, Verdict, RETAIL_SCENARIO,
};

use crate::config::{AgentKind, Resolved, RunConfig};
use crate::manifest::{write_manifest, Fixtures};
use crate::CliError;

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Run(format!("cannot read {}: {e}", path.display())))
}

fn create_out(out: &Path, files: &[&str]) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Run(format!("cannot create {}: {e}", out.display())))?;
    match files.iter().map(|f| out.join(f)).find(|p| p.exists()) {
        Some(p) => Err(CliError::Run(format!(
            "{} already exists; choose another --out",
            p.display()
        ))),
        None => Ok(()),
    }
}

/// The domain named by `env`, recording its document in `fixtures`.
fn load_env(cfg: &RunConfig, fixtures: &mut Fixtures) -> Result<DomainBundle, CliError> {
    match cfg.env.as_str() {
        "toy" => {
            fixtures.add("bundled:toy_domain", TOY_DOMAIN.as_bytes());
            Ok(ToyToolEnv::new().bundle().clone())
        }
        "retail" => {
            fixtures.add("bundled:retail_domain", RETAIL_DOMAIN.as_bytes());
            Ok(retail_domain())
        }
        path => {
            let bytes = read_input(Path::new(path))?;
            fixtures.add(path, &bytes);
            let text = String::from_utf8(bytes).map_err(|_| CliError::Run(format!("{path} is not UTF-8")))?;
            load_domain(&text).map_err(|e| CliError::Run(format!("{path}: {e}")))
        }
    }
}

fn selected_tasks<'b>(cfg: &RunConfig, bundle: &'b DomainBundle) -> Result<Vec<&'b Task>, CliError> {
    if cfg.tasks.is_empty() {
        return Ok(bundle.tasks().iter().collect());
    }
    cfg.tasks
        .iter()
        .map(|id| {
            bundle
                .task(id)
                .ok_or_else(|| CliError::Usage(format!("unknown task {id}")))
        })
        .collect()
}

/// Independent generator seed for rollout `stream` of a run.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rand_chacha::rand_core::RngCore::next_u64(&mut rng)
}

fn chat_client(cfg: &ClientConfig) -> Result<ChatClient, CliError> {
    ChatClient::new(cfg.clone()).map_err(CliError::run)
}

fn fmt_ratio(r: Result<f64, impl std::fmt::Display>) -> String {
    r.map(|v| format!("{v:.3}")).unwrap_or_else(|_| "n/a".into())
}

/// Binary rewards grouped by task id, in first-seen order.
fn reward_rows<'a>(items: impl Iterator<Item = (&'a str, u8)>) -> Vec<Vec<u8>> {
    let mut order: Vec<&str> = Vec::new();
    let mut rows: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for (task, r) in items {
        if !rows.contains_key(task) {
            order.push(task);
        }
        rows.entry(task).or_default().push(r);
    }
    order.into_iter().map(|t| rows.remove(t).expect("seen")).collect()
}

pub fn rollout(resolved: &Resolved) -> Result<(), CliError> {
    let cfg = &resolved.config;
    let mut fixtures = Fixtures::default();
    let bundle = load_env(cfg, &mut fixtures)?;
    let tasks = selected_tasks(cfg, &bundle)?;
    if cfg.rollout.tool_execution != ToolExecution::LocalEnv {
        return Err(CliError::Usage(
            "rollout runs on the local environment; set rollout.tool_execution = \"local_env\"".into(),
        ));
    }

    let toy = ToyToolEnv::new();
    let policy = match (cfg.agent, &cfg.checkpoint) {
        (AgentKind::Categorical, _) if cfg.env != "toy" => {
            return Err(CliError::Usage(
                "the categorical agent acts on the toy task; use env = \"toy\"".into(),
            ))
        }
        (AgentKind::Categorical, Some(path)) => {
            let bytes = read_input(path)?;
            fixtures.add(path.display().to_string(), &bytes);
            let text = String::from_utf8_lossy(&bytes);
            let ckpt = Checkpoint::from_json(&text)
                .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
            Some((Arc::new(ckpt.params), Arc::new(ckpt.reference)))
        }
        (AgentKind::Categorical, None) => {
            let p = Arc::new(PolicyParams::uniform(toy.num_contexts(), toy.actions().len()));
            Some((p.clone(), p))
        }
        _ => None,
    };
    let needs_client = cfg.agent == AgentKind::Llm || cfg.rollout.user_mode == UserMode::Llm;
    let client = needs_client.then(|| chat_client(&cfg.client)).transpose()?;

    let out = &cfg.out;
    create_out(out, &["trajectories.jsonl", "manifest.json"])?;
    let actions = Arc::new(toy.actions().to_vec());
    let g = cfg.rollout.group_size as u64;
    let mut records = Vec::new();
    println!("{:<28} {:>8} {:>8} {:>8}", "task", "rollouts", "reward", "tcr");
    for (ti, task) in tasks.iter().enumerate() {
        let roles = |i: usize| {
            let stream = ti as u64 * g + i as u64;
            let agent: Box<dyn AgentPolicy> = match cfg.agent {
                AgentKind::Categorical => {
                    let (p, r) = policy.clone().expect("categorical policy loaded");
                    Box::new(CategoricalAgent::new(
                        p,
                        r,
                        actions.clone(),
                        toy.context_fn(),
                        ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, stream)),
                    ))
                }
                AgentKind::Fuzz => Box::new(FuzzAgent::new(stream_seed(cfg.seed, stream))),
                AgentKind::Llm => Box::new(LlmAgent::new(
                    client.clone().expect("client built"),
                    cfg.models.agent.clone(),
                    cfg.models.agent_max_tokens,
                )),
            };
            let user: Box<dyn UserSimulator> = match cfg.rollout.user_mode {
                UserMode::Scripted => Box::new(ScriptedUser::for_task(task)),
                UserMode::Llm => Box::new(LlmUser::new(
                    client.clone().expect("client built"),
                    cfg.models.user.clone(),
                    PromptTemplate::bundled(),
                )),
                UserMode::None => Box::new(NoUser),
            };
            RolloutRoles { agent, user }
        };
        let group = run_group(&bundle, task, &cfg.rollout, &roles).map_err(CliError::run)?;
        let n = group.results.len() as f64;
        println!(
            "{:<28} {:>8} {:>8.3} {:>8.3}",
            task.id,
            group.results.len(),
            group.results.iter().map(|r| f64::from(r.reward)).sum::<f64>() / n,
            group.results.iter().map(|r| r.tcr).sum::<f64>() / n,
        );
        for (t, r) in group.trajectories.into_iter().zip(&group.results) {
            records.push(TrajectoryRecord::new(t, r));
        }
    }
    write_trajectories(&out.join("trajectories.jsonl"), &records).map_err(CliError::run)?;
    let rows = reward_rows(records.iter().map(|r| (r.trajectory.task_id.as_str(), r.reward)));
    println!(
        "{} trajectories; all-correct {} all-wrong {}",
        records.len(),
        fmt_ratio(all_correct_ratio(&rows)),
        fmt_ratio(all_wrong_ratio(&rows))
    );
    write_manifest(out, "rollout", resolved, &fixtures, &["trajectories.jsonl"])
}

pub fn train(resolved: &Resolved, resume: Option<&Path>) -> Result<(), CliError> {
    let cfg = &resolved.config;
    if cfg.env != "toy" {
        return Err(CliError::Usage(
            "training runs on the toy task; use env = \"toy\"".into(),
        ));
    }
    let mut fixtures = Fixtures::default();
    fixtures.add("bundled:toy_domain", TOY_DOMAIN.as_bytes());
    let env = ToyToolEnv::new();
    let out = &cfg.out;
    let mut trainer = match resume {
        None => {
            create_out(out, &["metrics.jsonl", "checkpoint.json", "manifest.json"])?;
            let init = PolicyParams::uniform(env.num_contexts(), env.actions().len());
            Trainer::new(&env, cfg.grpo.clone(), cfg.rollout.clone(), init).map_err(CliError::run)?
        }
        Some(path) => {
            let bytes = read_input(path)?;
            fixtures.add(format!("resume:{}", path.display()), &bytes);
            let ckpt = Checkpoint::from_json(&String::from_utf8_lossy(&bytes))
                .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
            if ckpt.config != cfg.grpo {
                log::warn!("resuming with the checkpoint's GRPO settings, not the configured ones");
            }
            fs::create_dir_all(out).map_err(CliError::run)?;
            Trainer::from_checkpoint(&env, ckpt).map_err(CliError::run)?
        }
    };

    let metrics_path = out.join("metrics.jsonl");
    let mut writer = MetricsWriter::open(&metrics_path).map_err(CliError::run)?;
    let mut outputs = vec!["metrics.jsonl".to_string(), "checkpoint.json".to_string()];
    let mut last = None;
    while !trainer.is_done() {
        let step = trainer.step().map_err(CliError::run)?;
        writer.append(&step.metrics).map_err(CliError::run)?;
        info!(
            "step {} mean reward {:.3}",
            step.metrics.step, step.metrics.mean_reward
        );
        let done = trainer.step_index();
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            let name = format!("checkpoints/step-{done}.json");
            fs::create_dir_all(out.join("checkpoints")).map_err(CliError::run)?;
            trainer
                .checkpoint()
                .save(&out.join(&name))
                .map_err(CliError::run)?;
            outputs.push(name);
        }
        last = Some(step.metrics);
    }
    trainer
        .checkpoint()
        .save(&out.join("checkpoint.json"))
        .map_err(CliError::run)?;
    match last {
        Some(m) => println!(
            "trained {} steps; final step {} mean reward {:.3}, entropy {:.3}",
            trainer.total_steps(),
            m.step,
            m.mean_reward,
            m.mean_entropy
        ),
        None => println!(
            "nothing to do: the checkpoint is already at step {}",
            trainer.step_index()
        ),
    }
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(out, "train", resolved, &fixtures, &outputs)
}

fn load_scenario(cfg: &RunConfig, fixtures: &mut Fixtures) -> Result<Scenario, CliError> {
    match &cfg.synth.scenario {
        None => {
            fixtures.add("bundled:retail_scenario", RETAIL_SCENARIO.as_bytes());
            Ok(retail_scenario())
        }
        Some(path) => {
            let bytes = read_input(path)?;
            fixtures.add(path.display().to_string(), &bytes);
            Scenario::parse(&String::from_utf8_lossy(&bytes))
                .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
        }
    }
}

fn synthesize_live(cfg: &RunConfig, fixtures: &mut Fixtures) -> Result<Vec<SynthTrajectory>, CliError> {
    let scenario = load_scenario(cfg, fixtures)?;
    let client = chat_client(&cfg.client)?;
    let rollout_cfg = RolloutConfig {
        user_mode: UserMode::Llm,
        tool_execution: cfg.synth.tool_execution,
        ..cfg.rollout.clone()
    };
    let judge = LlmJudge::new(client.clone(), cfg.models.judge.clone(), JudgeTemplate::bundled());
    let rules = RuleSet::v1();
    let mut out = Vec::new();
    for i in 0..cfg.synth.count as u64 {
        let mut tools: Box<dyn ToolBackend> = match cfg.synth.tool_execution {
            ToolExecution::LlmSimulated => {
                let memory =
                    generate_memory(&scenario, cfg.seed + i, &cfg.synth.memory).map_err(CliError::run)?;
                let model = LlmToolModel::new(
                    client.clone(),
                    cfg.models.tool.clone(),
                    ToolPromptTemplate::bundled(),
                );
                Box::new(SimulatedTools::new(
                    scenario.clone(),
                    memory,
                    ToolSimBackend::Llm(model),
                ))
            }
            ToolExecution::RemoteExecutor => {
                let url = cfg.synth.executor_url.clone().ok_or_else(|| {
                    CliError::Usage("synth.executor_url is required for remote_executor".into())
                })?;
                let exec_cfg = ClientConfig {
                    base_url: url,
                    ..cfg.client.clone()
                };
                Box::new(RemoteToolExecutor::connect(exec_cfg).map_err(CliError::run)?)
            }
            other => {
                return Err(CliError::Usage(format!(
                    "synth.tool_execution must be llm_simulated or remote_executor, not {other:?}"
                )))
            }
        };
        let mut agent = LlmAgent::new(
            client.clone(),
            cfg.models.agent.clone(),
            cfg.models.agent_max_tokens,
        );
        let mut user = LlmUser::new(client.clone(), cfg.models.user.clone(), PromptTemplate::bundled());
        let mut traj = synthesize_trajectory(&scenario, &mut agent, &mut user, tools.as_mut(), &rollout_cfg)
            .map_err(CliError::run)?;
        if traj.verdict == Verdict::Unverified {
            dual_verify(&mut traj, &rules, &judge).map_err(CliError::run)?;
        }
        out.push(traj);
    }
    Ok(out)
}

pub fn synth(resolved: &Resolved, replay: Option<&Path>, judge_reply: &str) -> Result<(), CliError> {
    let cfg = &resolved.config;
    let mut fixtures = Fixtures::default();
    let out = &cfg.out;
    let trajectories = match replay {
        Some(path) => {
            let bytes = read_input(path)?;
            fixtures.add(path.display().to_string(), &bytes);
            let fixture = ReplayFixture::parse(&String::from_utf8_lossy(&bytes))
                .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
            create_out(out, &["synth.jsonl", "sft.jsonl", "manifest.json"])?;
            vec![run_replay(&fixture, judge_reply, &RuleSet::v1()).map_err(CliError::run)?]
        }
        None => {
            create_out(out, &["synth.jsonl", "sft.jsonl", "manifest.json"])?;
            synthesize_live(cfg, &mut fixtures)?
        }
    };

    let mut all = String::new();
    for t in &trajectories {
        all.push_str(&serde_json::to_string(t).expect("trajectories serialize"));
        all.push('\n');
        println!("{:<24} {:>10?} {}", t.scenario_id, t.verdict, t.judge_rationale);
    }
    fs::write(out.join("synth.jsonl"), all).map_err(CliError::run)?;
    let accepted: Vec<SynthTrajectory> = trajectories
        .iter()
        .filter(|t| t.verdict == Verdict::Accepted)
        .cloned()
        .collect();
    let n = export_sft(&accepted, &out.join("sft.jsonl")).map_err(CliError::run)?;
    println!("{} synthesized, {n} accepted and exported", trajectories.len());
    write_manifest(out, "synth", resolved, &fixtures, &["synth.jsonl", "sft.jsonl"])
}

fn load_records(path: &Path) -> Result<Vec<TrajectoryRecord>, CliError> {
    read_trajectories(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

fn task_of<'b>(bundle: &'b DomainBundle, id: &str) -> Result<&'b Task, CliError> {
    bundle
        .task(id)
        .ok_or_else(|| CliError::Run(format!("task {id} is not in the configured domain")))
}

pub fn eval(resolved: &Resolved, path: &Path) -> Result<(), CliError> {
    let cfg = &resolved.config;
    let bundle = load_env(cfg, &mut Fixtures::default())?;
    let records = load_records(path)?;
    println!(
        "{:>4} {:<28} {:<15} {:>6} {:>6} {:>7}",
        "#", "task", "termination", "reward", "tcr", "checks"
    );
    let mut scored = Vec::new();
    let mut inconsistent = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let task = task_of(&bundle, &rec.trajectory.task_id)?;
        // Rebuild the final database by executing the recorded calls in order
        // on a fresh copy; each result must match the recorded one.
        let mut env = bundle.instantiate(task).map_err(CliError::run)?;
        let msgs = &rec.trajectory.messages;
        for (k, m) in msgs.iter().enumerate() {
            if let Some(call) = m.tool_call() {
                let got = env.execute(call);
                if msgs.get(k + 1).and_then(|n| n.tool_result()) != Some(&got) {
                    inconsistent.push(i);
                    break;
                }
            }
        }
        let mut traj = rec.trajectory.clone();
        traj.final_db = Some(env.into_db());
        let result = score_trajectory(&bundle, task, &traj);
        let checks = format!(
            "{}/{}",
            result.satisfied.iter().filter(|s| **s).count(),
            result.satisfied.len()
        );
        println!(
            "{:>4} {:<28} {:<15} {:>6} {:>6.3} {:>7}",
            i,
            task.id,
            format!("{:?}", traj.termination),
            result.reward,
            result.tcr,
            checks
        );
        scored.push((task.id.as_str(), result));
    }
    if !inconsistent.is_empty() {
        return Err(CliError::Run(format!(
            "trajectories {inconsistent:?} do not match the configured domain: re-executed tool results differ"
        )));
    }
    let n = scored.len().max(1) as f64;
    let rows = reward_rows(scored.iter().map(|(t, r)| (*t, r.reward)));
    println!(
        "{} trajectories: mean reward {:.3}, mean tcr {:.3}, all-correct {}, all-wrong {}",
        scored.len(),
        scored.iter().map(|(_, r)| f64::from(r.reward)).sum::<f64>() / n,
        scored.iter().map(|(_, r)| r.tcr).sum::<f64>() / n,
        fmt_ratio(all_correct_ratio(&rows)),
        fmt_ratio(all_wrong_ratio(&rows)),
    );
    Ok(())
}

pub fn metrics(path: &Path) -> Result<(), CliError> {
    let records = read_metrics(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    if let Some(w) = records.windows(2).find(|w| w[1].step <= w[0].step) {
        return Err(CliError::Run(format!(
            "{}: step {} does not follow step {}",
            path.display(),
            w[1].step,
            w[0].step
        )));
    }
    let tools: Vec<&String> = records
        .iter()
        .flat_map(|r| r.tool_counts.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    print!(
        "{:>6} {:>7} {:>8} {:>9} {:>9} {:>6} {:>7} {:>6} {:>7} {:>7}",
        "step", "reward", "entropy", "kl", "grad_norm", "turns", "tokens", "4gram", "all_ok", "all_bad"
    );
    for t in &tools {
        print!(" {t:>8}");
    }
    println!();
    for r in &records {
        print!(
            "{:>6} {:>7.3} {:>8.4} {:>9.2e} {:>9.4} {:>6.2} {:>7.2} {:>6.3} {:>7.3} {:>7.3}",
            r.step,
            r.mean_reward,
            r.mean_entropy,
            r.kl_value,
            r.grad_norm,
            r.mean_turns,
            r.mean_response_tokens,
            r.unique_4gram_ratio,
            r.all_correct_ratio,
            r.all_wrong_ratio
        );
        for t in &tools {
            print!(" {:>8.3}", r.tool_counts.get(*t).copied().unwrap_or(0.0));
        }
        println!();
    }
    println!("total: {} steps", records.len());
    Ok(())
}

pub fn replay(resolved: &Resolved, path: &Path) -> Result<(), CliError> {
    let cfg = &resolved.config;
    if cfg.rollout.tool_execution != ToolExecution::LocalEnv {
        return Err(CliError::Usage(
            "replay re-executes on the local environment; set rollout.tool_execution = \"local_env\"".into(),
        ));
    }
    let bundle = load_env(cfg, &mut Fixtures::default())?;
    let records = load_records(path)?;
    let rollout_cfg = RolloutConfig {
        user_mode: match cfg.rollout.user_mode {
            UserMode::None => UserMode::None,
            _ => UserMode::Scripted,
        },
        ..cfg.rollout.clone()
    };
    let mut failures = 0;
    for (i, rec) in records.iter().enumerate() {
        let recorded = &rec.trajectory;
        let task = task_of(&bundle, &recorded.task_id)?;
        let mut env = bundle.instantiate(task).map_err(CliError::run)?;
        let again = replay_trajectory(task, recorded, &mut env, &rollout_cfg);
        let problem = if recorded.final_db_hash.is_none() {
            Some("no recorded final database hash".to_string())
        } else if again.final_db_hash != recorded.final_db_hash {
            Some(format!(
                "final database {} differs from recorded {}",
                again.final_db_hash.as_deref().unwrap_or("-"),
                recorded.final_db_hash.as_deref().unwrap_or("-")
            ))
        } else if recorded.termination != Termination::ProtocolError && again.messages != recorded.messages {
            Some("transcript differs".to_string())
        } else {
            None
        };
        match problem {
            None => println!(
                "{i:>4} {:<28} ok {}",
                task.id,
                again.final_db_hash.as_deref().unwrap_or("")
            ),
            Some(p) => {
                failures += 1;
                println!("{i:>4} {:<28} MISMATCH {p}", task.id);
            }
        }
    }
    println!("{} replayed, {failures} mismatched", records.len());
    if failures > 0 {
        return Err(CliError::Run(format!(
            "{failures} trajectories did not replay identically"
        )));
    }
    Ok(())
}
