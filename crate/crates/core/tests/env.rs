mod common;

use proptest::prelude::*;
use serde_json::{json, Value};
use userloop::env::{
    load_domain, retail_domain, score_exchanges, Database, EnvError, RewardResult, SnapshotStore, Task,
    ToolCall, ToolResult, VerificationCriterion,
};
use userloop::rollout::{score_trajectory, Body, Message, Termination};

fn bodies(msgs: &[Message]) -> Vec<Body> {
    msgs.iter().map(|m| m.body.clone()).collect()
}

/// Independent comparison for tool payloads: numbers within 1e-9.
fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => (x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-9,
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| close(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| close(v, w)))
        }
        _ => a == b,
    }
}

fn assert_same_conversation(actual: &[Body], recorded: &[Body]) {
    assert_eq!(actual.len(), recorded.len());
    for (i, (a, r)) in actual.iter().zip(recorded).enumerate() {
        match (a, r) {
            (Body::ToolResult(ToolResult::Ok(x)), Body::ToolResult(ToolResult::Ok(y))) => {
                assert!(close(x, y), "payload {i}: {x} vs {y}")
            }
            _ => assert_eq!(a, r, "message {i}"),
        }
    }
}

#[test]
fn correct_earbuds_trajectory_scores_one() {
    let (bundle, traj) = common::replay_retail("correct");
    assert_eq!(traj.termination, Termination::Stop);
    assert_same_conversation(&bodies(&traj.messages[1..]), &common::recorded("correct"));
    let task = bundle.task("retail_earbuds_blue").unwrap();
    let r = score_trajectory(&bundle, task, &traj);
    assert_eq!(r.reward, 1, "{:?}", r.satisfied);
    assert_eq!(r.tcr_ratio(), (4, 4));
    let db = traj.final_db.unwrap();
    assert_eq!(
        db.resolve("orders.#W5061109.items.1.item_id").unwrap(),
        "6077640618"
    );
    let refund = db
        .resolve("orders.#W5061109.payment_history.1.amount")
        .unwrap()
        .as_f64()
        .unwrap();
    assert!((refund - (256.67 - 242.92)).abs() < 1e-12);
}

#[test]
fn error_earbuds_trajectory_scores_zero_with_partial_tcr() {
    let (bundle, traj) = common::replay_retail("error");
    assert_eq!(traj.termination, Termination::Transfer);
    assert_same_conversation(&bodies(&traj.messages[1..]), &common::recorded("error"));
    let task = bundle.task("retail_earbuds_blue").unwrap();
    let r = score_trajectory(&bundle, task, &traj);
    assert_eq!(r.reward, 0);
    assert!(r.tcr > 0.0 && r.tcr < 1.0);
    // Only the status check holds: the wrong variant went in first and the
    // corrective second modification was refused.
    assert_eq!(r.satisfied, vec![true, false, false, false]);
}

fn db(v: Value) -> Database {
    Database::from_tables(serde_json::from_value(v).unwrap())
}

fn flag_task(k: usize, n: usize) -> (Task, Database) {
    let mut rec = serde_json::Map::new();
    let mut criteria = Vec::new();
    for i in 0..n {
        rec.insert(format!("f{i}"), json!(if i < k { "yes" } else { "no" }));
        criteria.push(VerificationCriterion::DbPathEquals {
            target: format!("t.r.f{i}"),
            expected: json!("yes"),
        });
    }
    let db = db(json!({"t": {"r": Value::Object(rec)}}));
    let task = Task {
        id: format!("k{k}n{n}"),
        domain_id: "t".into(),
        system_policy: String::new(),
        user_scenario: String::new(),
        initial_db: "base".into(),
        criteria,
        required_write_actions: None,
        user_script: Vec::new(),
        require_stop: false,
    };
    (task, db)
}

#[test]
fn k_of_n_tcr_is_exact() {
    let registry = retail_domain().registry().clone();
    for n in [1usize, 4, 10] {
        for k in 0..=n {
            let (task, db) = flag_task(k, n);
            let r = score_exchanges(&task, &db, &registry, std::iter::empty());
            assert_eq!(r.tcr_ratio(), (k, n));
            assert_eq!(r.tcr, k as f64 / n as f64);
            assert_eq!(r.reward, u8::from(k == n));
        }
    }
}

#[test]
fn reward_is_binary_all_or_nothing() {
    assert_eq!(RewardResult::from_flags(vec![]).reward, 0);
    assert_eq!(RewardResult::from_flags(vec![true]).reward, 1);
    assert_eq!(RewardResult::from_flags(vec![true, false]).reward, 0);
}

#[test]
fn failed_writes_leave_the_database_untouched() {
    let bundle = retail_domain();
    let task = bundle.task("retail_earbuds_blue").unwrap();
    let mut env = bundle.instantiate(task).unwrap();
    let before = env.db().content_hash();
    let bad = ToolCall::new(
        "modify_pending_order_items",
        json!({"order_id": "#W5061109", "item_ids": ["0"], "new_item_ids": ["6077640618"], "payment_method_id": "paypal_3742148"}),
    );
    assert!(!env.execute(&bad).is_ok());
    assert_eq!(env.db().content_hash(), before);
    assert_eq!(env.db().version(), 0);
    let unknown = env.execute(&ToolCall::new("no_such_tool", json!({})));
    assert!(unknown.error_text().unwrap().starts_with("Error"));
}

#[test]
fn snapshots_restore_exact_content() {
    let bundle = retail_domain();
    let task = bundle.task("retail_earbuds_blue").unwrap();
    let mut env = bundle.instantiate(task).unwrap();
    let start = env.db().content_hash();
    let tok = env.snapshot();
    let call = ToolCall::new(
        "modify_pending_order_items",
        json!({"order_id": "#W5061109", "item_ids": ["3694871183"], "new_item_ids": ["6077640618"], "payment_method_id": "paypal_3742148"}),
    );
    assert!(env.execute(&call).is_ok());
    assert_ne!(env.db().content_hash(), start);
    let later = env.snapshot();
    env.restore(tok).unwrap();
    assert_eq!(env.db().content_hash(), start);
    assert!(matches!(env.restore(later), Err(EnvError::StaleSnapshot(_))));

    let mut store = SnapshotStore::new();
    let t = store.snapshot(env.db());
    store.release(t);
    assert!(!store.is_live(t));
}

#[test]
fn malformed_domains_are_rejected() {
    let no_criteria = json!({"tools": [], "database": {}, "tasks": [{"id": "a", "criteria": []}]});
    assert!(matches!(
        load_domain(&no_criteria.to_string()),
        Err(EnvError::EmptyCriteria(_))
    ));
    let dup = json!({"tools": [], "database": {"t": {"r": {}}}, "tasks": [
        {"id": "a", "criteria": [{"kind": "db_record_present", "target": "t.r"}]},
        {"id": "a", "criteria": [{"kind": "db_record_present", "target": "t.r"}]}]});
    assert!(matches!(
        load_domain(&dup.to_string()),
        Err(EnvError::DuplicateTask(_))
    ));
    let missing_db = json!({"tools": [], "database": {}, "tasks": [
        {"id": "a", "initial_db": "other", "criteria": [{"kind": "db_record_present", "target": "t.r"}]}]});
    assert!(matches!(
        load_domain(&missing_db.to_string()),
        Err(EnvError::UnknownDatabase { .. })
    ));
}

proptest! {
    #[test]
    fn content_hash_tracks_content_only(a in "[a-z]{1,8}", b in "[a-z]{1,8}", v in any::<i64>()) {
        let x = db(json!({"t": {a.clone(): {"v": v}, b.clone(): {"w": 1}}}));
        let y = db(json!({"t": {b.clone(): {"w": 1}, a.clone(): {"v": v}}}));
        prop_assert_eq!(x.content_hash(), y.content_hash());
        let z = db(json!({"t": {a: {"v": v.wrapping_add(1)}, b: {"w": 1}}}));
        prop_assert_ne!(x.content_hash(), z.content_hash());
    }
}
