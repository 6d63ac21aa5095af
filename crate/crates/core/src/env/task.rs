//! Tasks, their verification criteria, and outcome scoring.
//!
//! Scoring looks at two things only: the final database and the multiset of
//! successful mutating tool calls. Dialogue text and read-only calls never
//! affect the result.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::db::Database;
use super::tools::{ToolCall, ToolRegistry, ToolResult};

/// Absolute tolerance used when a criterion compares two JSON numbers.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerificationCriterion {
    /// `target` is `table.record_id.field[.subfield]`.
    DbPathEquals {
        target: String,
        expected: Value,
    },
    /// `target` is `table.record_id`.
    DbRecordAbsent {
        target: String,
    },
    DbRecordPresent {
        target: String,
    },
    /// `target` is a tool name; `expected` is the argument subset that must
    /// match (only the listed keys are compared).
    ActionPerformed {
        target: String,
        #[serde(default = "empty_object")]
        expected: Value,
    },
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequiredAction {
    pub name: String,
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    #[serde(default)]
    pub domain_id: String,
    #[serde(default)]
    pub system_policy: String,
    #[serde(default)]
    pub user_scenario: String,
    /// Name of the database the task starts from; `base` is the bundle's
    /// top-level database.
    #[serde(default = "base_db")]
    pub initial_db: String,
    pub criteria: Vec<VerificationCriterion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_write_actions: Option<Vec<RequiredAction>>,
    /// Replies for a scripted user simulator, if the task ships one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_script: Vec<String>,
    /// When set, scoring a trajectory adds one more check: the episode must
    /// have ended with the stop sentinel.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub require_stop: bool,
}

fn base_db() -> String {
    "base".to_string()
}

impl Task {
    /// All checks in scoring order: the criteria followed by the required
    /// write actions (each as an `ActionPerformed` criterion).
    pub fn checks(&self) -> Vec<VerificationCriterion> {
        let mut all = self.criteria.clone();
        for a in self.required_write_actions.iter().flatten() {
            all.push(VerificationCriterion::ActionPerformed {
                target: a.name.clone(),
                expected: a.arguments.clone(),
            });
        }
        all
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResult {
    pub reward: u8,
    pub tcr: f64,
    pub satisfied: Vec<bool>,
}

impl RewardResult {
    pub fn from_flags(satisfied: Vec<bool>) -> Self {
        let (k, n) = (satisfied.iter().filter(|&&s| s).count(), satisfied.len());
        Self {
            reward: u8::from(n > 0 && k == n),
            tcr: if n == 0 { 0.0 } else { k as f64 / n as f64 },
            satisfied,
        }
    }

    /// TCR as an exact (satisfied, total) pair.
    pub fn tcr_ratio(&self) -> (usize, usize) {
        (
            self.satisfied.iter().filter(|&&s| s).count(),
            self.satisfied.len(),
        )
    }
}

/// JSON equality with [`NUMERIC_TOLERANCE`] on numbers.
pub fn values_match(actual: &Value, expected: &Value) -> bool {
    match (actual, expected) {
        (Value::Number(a), Value::Number(b)) => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() <= NUMERIC_TOLERANCE,
            _ => a == b,
        },
        (Value::Array(a), Value::Array(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_match(x, y))
        }
        (Value::Object(a), Value::Object(b)) => {
            a.len() == b.len()
                && a.iter()
                    .all(|(k, v)| b.get(k).is_some_and(|w| values_match(v, w)))
        }
        _ => actual == expected,
    }
}

fn action_matches(call: &ToolCall, name: &str, expected: &Value) -> bool {
    if call.name != name {
        return false;
    }
    let Value::Object(want) = expected else {
        return false;
    };
    // BTreeMap-backed JSON objects already iterate in lexicographic key order.
    want.iter().all(|(k, v)| {
        call.arguments
            .get(k)
            .is_some_and(|actual| values_match(actual, v))
    })
}

/// Evaluates one criterion against the final database and the successful
/// write actions.
pub fn criterion_satisfied(c: &VerificationCriterion, db: &Database, writes: &[&ToolCall]) -> bool {
    match c {
        VerificationCriterion::DbPathEquals { target, expected } => {
            db.resolve(target).is_some_and(|v| values_match(v, expected))
        }
        VerificationCriterion::DbRecordAbsent { target } => db.resolve(target).is_none(),
        VerificationCriterion::DbRecordPresent { target } => db.resolve(target).is_some(),
        VerificationCriterion::ActionPerformed { target, expected } => {
            writes.iter().any(|call| action_matches(call, target, expected))
        }
    }
}

/// Scores from the final database and an iterator over executed tool calls
/// with their results. Only successful calls to mutating tools count as
/// write actions.
pub fn score_exchanges<'a>(
    task: &Task,
    final_db: &Database,
    registry: &ToolRegistry,
    exchanges: impl IntoIterator<Item = (&'a ToolCall, &'a ToolResult)>,
) -> RewardResult {
    let writes: Vec<&ToolCall> = exchanges
        .into_iter()
        .filter(|(call, res)| res.is_ok() && registry.get(&call.name).is_some_and(|s| s.mutating))
        .map(|(call, _)| call)
        .collect();
    let flags = task
        .checks()
        .iter()
        .map(|c| criterion_satisfied(c, final_db, &writes))
        .collect();
    RewardResult::from_flags(flags)
}
