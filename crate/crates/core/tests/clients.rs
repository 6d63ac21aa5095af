use std::time::Duration;

use serde_json::{json, Value};
use userloop::clients::*;
use userloop::env::{retail_domain, ToolCall, ToolResult};
use userloop::rollout::{
    run_rollout, AgentPolicy, AgentView, Body, RoleError, RolloutConfig, Termination, ToolBackend,
    ToolExecution, UserMode, STOP_SENTINEL,
};

fn request(text: &str) -> ChatRequest {
    ChatRequest {
        model: "m".into(),
        messages: vec![ChatMessage::user(text)],
        tools: None,
        temperature: 0.0,
        max_tokens: 64,
    }
}

fn client(url: &str) -> ChatClient {
    ChatClient::new(ClientConfig::local(url)).unwrap()
}

#[test]
fn transient_failures_are_retried() {
    let server = MockServer::canned([
        MockReply::Status(503, "busy".into()),
        MockReply::Status(429, "slow down".into()),
        MockReply::Json(text_body("hello")),
    ])
    .unwrap();
    let (resp, attempts) = client(server.url()).chat_counted(&request("hi")).unwrap();
    assert_eq!(resp.content.as_deref(), Some("hello"));
    assert_eq!(attempts, 3);
    assert_eq!(server.requests()[0].0, "/chat/completions");
}

#[test]
fn auth_and_client_errors_are_not_retried() {
    let server = MockServer::canned([
        MockReply::Status(401, "no".into()),
        MockReply::Json(text_body("x")),
    ])
    .unwrap();
    assert!(matches!(
        client(server.url()).chat(&request("hi")),
        Err(ClientError::Auth(401))
    ));
    assert_eq!(server.hits(), 1);

    let server = MockServer::canned([MockReply::Status(400, "bad".into())]).unwrap();
    assert!(matches!(
        client(server.url()).chat(&request("hi")),
        Err(ClientError::Http { status: 400, .. })
    ));
}

#[test]
fn retries_are_bounded() {
    let server = MockServer::canned([]).unwrap();
    match client(server.url()).chat(&request("hi")) {
        Err(ClientError::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.hits(), 3);
}

#[test]
fn timeouts_count_as_transient() {
    let server = MockServer::canned([
        MockReply::Delay(
            Duration::from_millis(400),
            Box::new(MockReply::Json(text_body("late"))),
        ),
        MockReply::Json(text_body("on time")),
    ])
    .unwrap();
    let mut cfg = ClientConfig::local(server.url());
    cfg.timeout = Duration::from_millis(100);
    let (resp, attempts) = ChatClient::new(cfg)
        .unwrap()
        .chat_counted(&request("hi"))
        .unwrap();
    assert_eq!(resp.content.as_deref(), Some("on time"));
    assert_eq!(attempts, 2);
}

#[test]
fn malformed_bodies_are_reported() {
    let server = MockServer::canned([MockReply::Json(json!({"choices": []}))]).unwrap();
    assert!(matches!(
        client(server.url()).chat(&request("hi")),
        Err(ClientError::Malformed(_))
    ));
    let server = MockServer::canned([MockReply::Json(
        json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": ""}}]}),
    )])
    .unwrap();
    assert!(matches!(
        client(server.url()).chat(&request("hi")),
        Err(ClientError::Malformed(_))
    ));
}

#[test]
fn missing_api_key_is_a_config_error() {
    let mut cfg = ClientConfig::local("http://127.0.0.1:9");
    cfg.api_key_env = Some("USERLOOP_TEST_KEY_THAT_IS_NOT_SET".into());
    assert!(matches!(ChatClient::new(cfg), Err(ClientError::MissingKey(_))));
}

#[test]
fn record_then_replay_is_offline_and_identical() {
    let upstream = MockServer::canned([
        MockReply::Json(text_body("first")),
        MockReply::Json(text_body("second")),
    ])
    .unwrap();
    let recorder = MockServer::record(upstream.url()).unwrap();
    let c = client(recorder.url());
    let a = c.chat(&request("one")).unwrap();
    let b = c.chat(&request("two")).unwrap();
    let recording = recorder.recording();
    assert_eq!(recording.exchanges.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rec.json");
    recording.save(&path).unwrap();
    drop(recorder);
    drop(upstream);
    let replay = MockServer::replay(Recording::load(&path).unwrap()).unwrap();
    let c = client(replay.url());
    // Answered by request equality, not order.
    assert_eq!(c.chat(&request("two")).unwrap(), b);
    assert_eq!(c.chat(&request("one")).unwrap(), a);
}

#[test]
fn agent_and_user_roles_over_http() {
    let bundle = retail_domain();
    let task = bundle.task("retail_earbuds_blue").unwrap().clone();
    let lookup = ToolCall::new("get_order_details", json!({"order_id": "#W5061109"}));
    let agent_srv = MockServer::canned([
        MockReply::Json(tool_calls_body(std::slice::from_ref(&lookup))),
        MockReply::Json(text_body("Your order is pending. Anything else?")),
    ])
    .unwrap();
    let user_srv = MockServer::canned([
        MockReply::Json(text_body("Hi, what is the status of order #W5061109?")),
        MockReply::Json(text_body(&format!("No, thanks. {STOP_SENTINEL}"))),
    ])
    .unwrap();
    let mut agent = LlmAgent::new(client(agent_srv.url()), "agent", 512);
    let mut user = LlmUser::new(client(user_srv.url()), "user", PromptTemplate::bundled());
    let mut env = bundle.instantiate(&task).unwrap();
    let cfg = RolloutConfig {
        user_mode: UserMode::Llm,
        ..RolloutConfig::default()
    };
    let traj = run_rollout(&task, &mut agent, &mut user, &mut env, &cfg);
    assert_eq!(traj.termination, Termination::Stop);
    let roles: Vec<_> = traj.messages.iter().map(|m| m.role()).collect();
    use userloop::rollout::Role as R;
    assert_eq!(
        roles,
        vec![
            R::System,
            R::User,
            R::ToolCall,
            R::ToolResult,
            R::AgentText,
            R::User
        ]
    );

    // The agent saw the declarations and, on its second request, the tool exchange.
    let reqs = agent_srv.requests();
    assert_eq!(
        reqs[0].1["tools"].as_array().unwrap().len(),
        bundle.registry().len()
    );
    let second = reqs[1].1["messages"].as_array().unwrap();
    assert_eq!(second.last().unwrap()["role"], "tool");

    // The user's model sees the conversation with roles flipped and no system policy.
    let user_reqs = user_srv.requests();
    let msgs = user_reqs[1].1["messages"].as_array().unwrap();
    assert_eq!(msgs[0]["role"], "system");
    assert!(!msgs[0]["content"]
        .as_str()
        .unwrap()
        .contains("Retail support policy"));
    assert_eq!(msgs.last().unwrap()["role"], "user");
    assert_eq!(
        msgs.last().unwrap()["content"],
        "Your order is pending. Anything else?"
    );
}

#[test]
fn invalid_agent_calls_are_protocol_errors() {
    let bundle = retail_domain();
    let task = bundle.tasks()[0].clone();
    let bad = ToolCall::new("get_order_details", json!({"order": 5}));
    let srv = MockServer::canned([MockReply::Json(tool_calls_body(&[bad]))]).unwrap();
    let mut agent = LlmAgent::new(client(srv.url()), "agent", 512);
    let mut env = bundle.instantiate(&task).unwrap();
    let mut user = ScriptedUser::for_task(&task);
    let traj = run_rollout(&task, &mut agent, &mut user, &mut env, &RolloutConfig::default());
    assert_eq!(traj.termination, Termination::ProtocolError);
    assert!(traj.error.unwrap().contains("agent"));
}

#[test]
fn remote_executor_matches_local_environment() {
    let bundle = retail_domain();
    let task = bundle.task("retail_earbuds_blue").unwrap();
    let server = mock_executor(bundle.instantiate(task).unwrap()).unwrap();
    let mut remote = RemoteToolExecutor::connect(ClientConfig::local(server.url())).unwrap();
    assert_eq!(remote.tools().len(), bundle.registry().len());
    let local_specs: Vec<_> = bundle
        .registry()
        .specs()
        .map(|s| (s.name.clone(), s.mutating))
        .collect();
    let remote_specs: Vec<_> = remote
        .tool_specs()
        .iter()
        .map(|s| (s.name.clone(), s.mutating))
        .collect();
    assert_eq!(local_specs, remote_specs);

    let mut local = bundle.instantiate(task).unwrap();
    for call in [
        ToolCall::new(
            "find_user_id_by_name_zip",
            json!({"first_name": "Chen", "last_name": "Johnson", "zip": "77004"}),
        ),
        ToolCall::new("find_user_id_by_email", json!({"email": "nobody@example.com"})),
        ToolCall::new("get_order_details", json!({"order_id": "#W5061109"})),
        ToolCall::new(
            "modify_pending_order_items",
            json!({"order_id": "#W5061109", "item_ids": ["3694871183"], "new_item_ids": ["6077640618"], "payment_method_id": "paypal_3742148"}),
        ),
        ToolCall::new("get_order_details", json!({"order_id": "#W5061109"})),
    ] {
        assert_eq!(remote.call(&call), local.execute(&call), "{call:?}");
    }
}

#[test]
fn unreachable_executor_yields_error_results() {
    let bundle = retail_domain();
    let server = mock_executor(bundle.instantiate(&bundle.tasks()[0]).unwrap()).unwrap();
    let mut remote = RemoteToolExecutor::connect(ClientConfig::local(server.url())).unwrap();
    drop(server);
    let r = remote.call(&ToolCall::new(
        "get_order_details",
        json!({"order_id": "#W5061109"}),
    ));
    assert!(r.error_text().unwrap().contains("unavailable"));
}

#[test]
fn executor_speaks_json_rpc() {
    let server = executor_server(Vec::new(), |_| ToolResult::Ok(json!(1))).unwrap();
    let (text, _) = client(server.url())
        .post_with_retries("", &json!({"jsonrpc": "2.0", "id": 7, "method": "nope"}))
        .unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["id"], 7);
    assert_eq!(v["error"]["code"], -32601);
}

#[test]
fn transcripts_round_trip_through_chat_messages() {
    let (_, traj) = {
        let bundle = retail_domain();
        let task = bundle.task("retail_earbuds_blue").unwrap().clone();
        let srv = MockServer::canned([
            MockReply::Json(tool_calls_body(&[
                ToolCall::new("get_order_details", json!({"order_id": "#W5061109"})),
                ToolCall::new("get_user_details", json!({"user_id": "chen_johnson_4204"})),
            ])),
            MockReply::Json(text_body(STOP_SENTINEL)),
        ])
        .unwrap();
        let mut agent = LlmAgent::new(client(srv.url()), "a", 256);
        let mut env = bundle.instantiate(&task).unwrap();
        let cfg = RolloutConfig {
            tool_execution: ToolExecution::LocalEnv,
            ..RolloutConfig::default()
        };
        let traj = run_rollout(
            &task,
            &mut agent,
            &mut ScriptedUser::for_task(&task),
            &mut env,
            &cfg,
        );
        (bundle, traj)
    };
    let chat = chat_transcript(&traj.messages, true);
    // Both calls of the step share one assistant message.
    assert_eq!(chat.iter().filter(|m| m.tool_calls.is_some()).count(), 1);
    assert_eq!(transcript_from_chat(&chat).unwrap(), traj.messages);
}

struct Echo;

impl AgentPolicy for Echo {
    fn act(&mut self, _: &AgentView<'_>) -> Result<userloop::rollout::AgentOutput, RoleError> {
        Err(ClientError::Malformed("x".into()).into())
    }
}

#[test]
fn client_errors_map_to_role_errors() {
    assert!(matches!(
        RoleError::from(ClientError::Malformed("x".into())),
        RoleError::Invalid(_)
    ));
    assert!(matches!(
        RoleError::from(ClientError::Transport("x".into())),
        RoleError::Transport(_)
    ));
    let bundle = retail_domain();
    let task = bundle.tasks()[0].clone();
    let mut env = bundle.instantiate(&task).unwrap();
    let traj = run_rollout(
        &task,
        &mut Echo,
        &mut ScriptedUser::for_task(&task),
        &mut env,
        &RolloutConfig::default(),
    );
    assert_eq!(traj.termination, Termination::ProtocolError);
    assert!(matches!(traj.messages.last().unwrap().body, Body::User(_)));
}
