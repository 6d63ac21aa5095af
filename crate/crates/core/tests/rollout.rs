use proptest::prelude::*;
use serde_json::json;
use userloop::clients::{ScriptedUser, SentinelPolicy};
use userloop::env::{retail_domain, ToolCall};
use userloop::grpo::{GrpoConfig, PolicyParams, ToyToolEnv, TrainEnv, Trainer};
use userloop::rollout::*;

fn earbuds() -> (userloop::env::DomainBundle, userloop::env::Task) {
    let bundle = retail_domain();
    let task = bundle.task("retail_earbuds_blue").unwrap().clone();
    (bundle, task)
}

fn think() -> ScriptStep {
    ScriptStep::Calls(vec![ToolCall::new("think", json!({"thought": "hmm"}))])
}

#[test]
fn turn_cap_counts_agent_steps() {
    let (bundle, task) = earbuds();
    let mut env = bundle.instantiate(&task).unwrap();
    let mut agent = ScriptedAgent::new(std::iter::repeat_with(think).take(100));
    let cfg = RolloutConfig {
        max_turns: 7,
        ..RolloutConfig::default()
    };
    let traj = run_rollout(
        &task,
        &mut agent,
        &mut ScriptedUser::for_task(&task),
        &mut env,
        &cfg,
    );
    assert_eq!(traj.termination, Termination::TurnCap);
    assert_eq!(traj.num_turns(), 7);
    assert_eq!(traj.count_role(Role::ToolCall), 7);
}

#[test]
fn over_budget_writes_are_rolled_back() {
    let (bundle, task) = earbuds();
    let initial = bundle.instantiate(&task).unwrap().db().content_hash();
    let write = ToolCall::new(
        "modify_pending_order_items",
        json!({"order_id": "#W5061109", "item_ids": ["3694871183"], "new_item_ids": ["6077640618"], "payment_method_id": "paypal_3742148"}),
    );
    // Room for the prompt and the call, but not for the order echoed back.
    let base = {
        let mut env = bundle.instantiate(&task).unwrap();
        let mut agent = ScriptedAgent::new([ScriptStep::Calls(vec![write.clone()])]);
        let t = run_rollout(
            &task,
            &mut agent,
            &mut ScriptedUser::for_task(&task),
            &mut env,
            &RolloutConfig::default(),
        );
        assert!(t.tool_exchanges().next().unwrap().1.is_ok());
        t.messages[..3].iter().map(|m| m.token_count).sum::<usize>()
    };
    let mut env = bundle.instantiate(&task).unwrap();
    let mut agent = ScriptedAgent::new([ScriptStep::Calls(vec![write])]);
    let cfg = RolloutConfig {
        max_tokens: base + 1,
        ..RolloutConfig::default()
    };
    let traj = run_rollout(
        &task,
        &mut agent,
        &mut ScriptedUser::for_task(&task),
        &mut env,
        &cfg,
    );
    assert_eq!(traj.termination, Termination::TokenCap);
    assert!(traj.total_tokens() <= cfg.max_tokens);
    assert_eq!(traj.count_role(Role::ToolCall), 0);
    assert_eq!(traj.final_db.unwrap().content_hash(), initial);
}

#[test]
fn stop_in_opening_message_ends_immediately() {
    let (bundle, task) = earbuds();
    let mut env = bundle.instantiate(&task).unwrap();
    let mut user = ScriptedUser::new(vec![STOP_SENTINEL.into()], SentinelPolicy::Stop).unwrap();
    let mut agent = ScriptedAgent::new([]);
    let traj = run_rollout(&task, &mut agent, &mut user, &mut env, &RolloutConfig::default());
    assert_eq!(traj.termination, Termination::Stop);
    assert_eq!(traj.num_turns(), 1);
    assert_eq!(
        traj.count_role(Role::AgentText) + traj.count_role(Role::ToolCall),
        0
    );
}

#[test]
fn transfer_sentinel_from_user_or_agent() {
    let (bundle, task) = earbuds();
    let mut env = bundle.instantiate(&task).unwrap();
    let mut user = ScriptedUser::new(vec!["hi".into()], SentinelPolicy::Transfer).unwrap();
    let mut agent = ScriptedAgent::new([ScriptStep::Text("Hello!".into())]);
    let traj = run_rollout(&task, &mut agent, &mut user, &mut env, &RolloutConfig::default());
    assert_eq!(traj.termination, Termination::Transfer);

    let mut env = bundle.instantiate(&task).unwrap();
    let mut agent = ScriptedAgent::new([ScriptStep::Text(format!("Transferring. {TRANSFER_SENTINEL}"))]);
    let traj = run_rollout(
        &task,
        &mut agent,
        &mut ScriptedUser::for_task(&task),
        &mut env,
        &RolloutConfig::default(),
    );
    assert_eq!(traj.termination, Termination::Transfer);
}

#[test]
fn malformed_agent_steps_are_protocol_errors() {
    let (bundle, task) = earbuds();
    for out in [
        AgentOutput::default(),
        AgentOutput {
            text: Some("both".into()),
            tool_calls: vec![ToolCall::new("think", json!({"thought": "x"}))],
            ..AgentOutput::default()
        },
    ] {
        let mut env = bundle.instantiate(&task).unwrap();
        let mut agent = ScriptedAgent::from_outputs([out]);
        let traj = run_rollout(
            &task,
            &mut agent,
            &mut ScriptedUser::for_task(&task),
            &mut env,
            &RolloutConfig::default(),
        );
        assert_eq!(traj.termination, Termination::ProtocolError);
        assert!(traj.error.is_some());
        let r = score_trajectory(&bundle, &task, &traj);
        assert_eq!(r.reward, 0);
        assert_eq!(r.tcr, 0.0);
    }
}

#[test]
fn parallel_and_serial_groups_agree() {
    let (bundle, task) = earbuds();
    let run = |parallel: bool| {
        let cfg = RolloutConfig {
            parallel,
            group_size: 8,
            user_mode: UserMode::Scripted,
            ..RolloutConfig::default()
        };
        let t = task.clone();
        let roles = move |i: usize| RolloutRoles {
            agent: Box::new(FuzzAgent::new(i as u64).with_arguments(vec![json!({"order_id": "#W5061109"})])),
            user: Box::new(ScriptedUser::for_task(&t)),
        };
        run_group(&bundle, &task, &cfg, &roles).unwrap()
    };
    let (a, b) = (run(true), run(false));
    assert_eq!(a.trajectories, b.trajectories);
    assert_eq!(a.rewards, b.rewards);
    let mut order = a.completion_order.clone();
    order.sort_unstable();
    assert_eq!(order, (0..8).collect::<Vec<_>>());
}

#[test]
fn policy_rollouts_replay_with_their_token_counts() {
    let env = ToyToolEnv::new();
    let init = PolicyParams::uniform(env.num_contexts(), env.actions().len());
    let cfg = GrpoConfig {
        seed: 5,
        ..GrpoConfig::default()
    };
    let mut trainer = Trainer::new(&env, cfg, RolloutConfig::default(), init).unwrap();
    let step = trainer.step().unwrap();
    let bundle = env.bundle();
    let task = &bundle.tasks()[0];
    let rcfg = RolloutConfig {
        user_mode: UserMode::None,
        ..RolloutConfig::default()
    };
    for traj in &step.groups[0].trajectories {
        let mut fresh = bundle.instantiate(task).unwrap();
        let again = replay_trajectory(task, traj, &mut fresh, &rcfg);
        assert_eq!(again.messages, traj.messages);
        assert_eq!(again.final_db_hash, traj.final_db_hash);
    }
}

#[test]
fn trajectories_persist_as_jsonl() {
    let env = ToyToolEnv::new();
    let init = PolicyParams::uniform(env.num_contexts(), env.actions().len());
    let mut trainer = Trainer::new(&env, GrpoConfig::default(), RolloutConfig::default(), init).unwrap();
    let step = trainer.step().unwrap();
    let group = &step.groups[0];
    let records: Vec<TrajectoryRecord> = group
        .trajectories
        .iter()
        .zip(&group.results)
        .map(|(t, r)| TrajectoryRecord::new(t.clone(), r))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_trajectories(&path, &records).unwrap();
    let back = read_trajectories(&path).unwrap();
    assert_eq!(back.len(), records.len());
    for (x, y) in back.iter().zip(&records) {
        assert_eq!(x.trajectory.messages, y.trajectory.messages);
        assert_eq!(x.trajectory.token_records, y.trajectory.token_records);
        assert_eq!(x.reward, y.reward);
    }
}

#[test]
fn token_masks_follow_message_roles() {
    let env = ToyToolEnv::new();
    let init = PolicyParams::uniform(env.num_contexts(), env.actions().len());
    let mut trainer = Trainer::new(&env, GrpoConfig::default(), RolloutConfig::default(), init).unwrap();
    for traj in &trainer.step().unwrap().groups[0].trajectories {
        let tagged = tag_tokens(traj).unwrap();
        let mut i = 0;
        for m in &tagged.messages {
            let agent = matches!(m.role(), Role::AgentText | Role::ToolCall);
            assert!(tagged.token_records[i..i + m.token_count]
                .iter()
                .all(|r| r.mask == agent));
            i += m.token_count;
        }
        assert_eq!(i, tagged.token_records.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fuzzed_episodes_respect_caps(seed in any::<u64>(), max_turns in 1usize..40, max_tokens in 50usize..5000) {
        let (bundle, task) = earbuds();
        let mut env = bundle.instantiate(&task).unwrap();
        let mut agent = FuzzAgent::new(seed).with_arguments(vec![json!({}), json!({"order_id": "#W5061109"})]);
        let cfg = RolloutConfig { max_turns, max_tokens, ..RolloutConfig::default() };
        let traj = run_rollout(&task, &mut agent, &mut ScriptedUser::for_task(&task), &mut env, &cfg);
        prop_assert!(traj.num_turns() <= max_turns);
        prop_assert!(traj.total_tokens() <= max_tokens);
        for w in traj.messages.windows(2) {
            prop_assert!(w[0].turn_index <= w[1].turn_index);
        }
    }

    #[test]
    fn scripted_replay_reproduces_fuzzed_episodes(seed in any::<u64>(), max_turns in 1usize..40, max_tokens in 50usize..5000) {
        let (bundle, task) = earbuds();
        let pool = vec![
            json!({}),
            json!({"order_id": "#W5061109"}),
            json!({"order_id": "#W5061109", "item_ids": ["3694871183"], "new_item_ids": ["6077640618"], "payment_method_id": "paypal_3742148"}),
        ];
        let cfg = RolloutConfig { max_turns, max_tokens, ..RolloutConfig::default() };
        let mut env = bundle.instantiate(&task).unwrap();
        let mut agent = FuzzAgent::new(seed).with_arguments(pool);
        let traj = run_rollout(&task, &mut agent, &mut ScriptedUser::for_task(&task), &mut env, &cfg);
        let mut fresh = bundle.instantiate(&task).unwrap();
        let again = replay_trajectory(&task, &traj, &mut fresh, &cfg);
        prop_assert_eq!(&again.final_db_hash, &traj.final_db_hash);
        if traj.termination != Termination::ProtocolError {
            prop_assert_eq!(&again.messages, &traj.messages);
            prop_assert_eq!(again.termination, traj.termination);
        }
    }

    #[test]
    fn approx_tokens_adds_over_whitespace(a in "[a-z!?#]{0,30}", b in "[a-z!?#]{0,30}") {
        let joined = format!("{a} {b}");
        prop_assert!(approx_tokens(&a) >= 1);
        let parts = usize::from(!a.is_empty()) * approx_tokens(&a) + usize::from(!b.is_empty()) * approx_tokens(&b);
        prop_assert!(approx_tokens(&joined) == parts.max(1));
    }
}
