//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags. Every resolved leaf value records where it came from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use userloop::clients::ClientConfig;
use userloop::grpo::GrpoConfig;
use userloop::rollout::{RolloutConfig, ToolExecution, UserMode};
use userloop::synth::MemoryConfig;

use crate::CliError;

/// Which agent drives `rollout`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Tabular policy over the toy task's actions (uniform, or from a checkpoint).
    #[default]
    Categorical,
    /// Seeded adversarial agent; useful for exercising budgets and replay.
    Fuzz,
    /// Chat model behind `client` / `models.agent`.
    Llm,
}

/// Model names for the model-backed roles, all served by `client`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub agent: String,
    pub user: String,
    pub tool: String,
    pub judge: String,
    /// Completion budget per agent request.
    pub agent_max_tokens: usize,
}

impl Default for Models {
    fn default() -> Self {
        Self {
            agent: "agent".into(),
            user: "user".into(),
            tool: "tool-simulator".into(),
            judge: "judge".into(),
            agent_max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    /// Scenario JSON; the bundled retail scenario when unset.
    pub scenario: Option<PathBuf>,
    /// Conversations to synthesize, with memory seeds `seed, seed + 1, …`.
    pub count: usize,
    pub memory: MemoryConfig,
    /// `llm_simulated` (a model plays the tools over a synthetic memory) or
    /// `remote_executor`.
    pub tool_execution: ToolExecution,
    /// JSON-RPC tool executor for `tool_execution = "remote_executor"`.
    pub executor_url: Option<String>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            scenario: None,
            count: 1,
            memory: MemoryConfig::default(),
            tool_execution: ToolExecution::LlmSimulated,
            executor_url: None,
        }
    }
}

/// The fully resolved configuration of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; also the GRPO seed.
    pub seed: u64,
    /// `toy`, `retail`, or a path to a domain JSON document.
    pub env: String,
    pub agent: AgentKind,
    /// Task ids to run; empty means every task of the domain.
    pub tasks: Vec<String>,
    /// Output directory.
    pub out: PathBuf,
    /// Policy checkpoint for categorical rollouts.
    pub checkpoint: Option<PathBuf>,
    /// Also write `checkpoints/step-K.json` after every K-th completed
    /// training step (0: only the final checkpoint).
    pub checkpoint_every: u64,
    pub rollout: RolloutConfig,
    pub grpo: GrpoConfig,
    pub client: ClientConfig,
    pub models: Models,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            env: "toy".into(),
            agent: AgentKind::default(),
            tasks: Vec::new(),
            out: PathBuf::from("runs/latest"),
            checkpoint: None,
            checkpoint_every: 0,
            rollout: RolloutConfig::default(),
            grpo: GrpoConfig::default(),
            client: ClientConfig::default(),
            models: Models::default(),
            synth: SynthSettings::default(),
        }
    }
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    File,
    Flag,
    /// Copied from another setting, or forced by the chosen environment.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_file: Option<PathBuf>,
    /// Flag overrides in the order given, as `key = value`.
    pub overrides: Vec<String>,
    /// Source of every leaf value, keyed by dotted path.
    pub sources: BTreeMap<String, Source>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub config: RunConfig,
    pub provenance: Provenance,
}

/// Values set on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub group_size: Option<usize>,
    pub max_turns: Option<usize>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub out: Option<PathBuf>,
    pub env: Option<String>,
    pub checkpoint: Option<PathBuf>,
}

impl Overrides {
    fn entries(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        if let Some(v) = self.seed {
            out.push(("seed", Value::from(v)));
        }
        if let Some(v) = self.group_size {
            out.push(("rollout.group_size", Value::from(v)));
        }
        if let Some(v) = self.max_turns {
            out.push(("rollout.max_turns", Value::from(v)));
        }
        if let Some(v) = self.beta {
            out.push(("grpo.kl_beta", Value::from(v)));
        }
        if let Some(v) = self.epsilon {
            out.push(("grpo.clip_epsilon", Value::from(v)));
        }
        if let Some(v) = &self.out {
            out.push(("out", Value::from(v.display().to_string())));
        }
        if let Some(v) = &self.env {
            out.push(("env", Value::from(v.clone())));
        }
        if let Some(v) = &self.checkpoint {
            out.push(("checkpoint", Value::from(v.display().to_string())));
        }
        out
    }
}

/// Settings the user may not set directly because another key owns them.
const DERIVED: [(&str, &str); 2] = [("grpo.seed", "seed"), ("grpo.group_size", "rollout.group_size")];

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn get<'a>(v: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(v, |v, k| v.get(k))
}

fn set(v: &mut Value, dotted: &str, value: Value) {
    let mut cur = v;
    let mut keys = dotted.split('.').peekable();
    while let Some(k) = keys.next() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("just made an object");
        if keys.peek().is_none() {
            obj.insert(k.to_string(), value);
            return;
        }
        cur = obj
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
}

fn leaves(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                leaves(child, &key, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

/// Resolves defaults, the optional config file and the flag overrides into a
/// validated [`RunConfig`] with full provenance.
pub fn resolve(config_file: Option<&Path>, flags: &Overrides) -> Result<Resolved, CliError> {
    let mut merged = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let file_doc = match config_file {
        None => Value::Object(Map::new()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let doc: toml::Table = toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
            serde_json::to_value(doc).expect("TOML values convert to JSON")
        }
    };
    for (key, owner) in DERIVED {
        if get(&file_doc, key).is_some() {
            return Err(CliError::Usage(format!(
                "`{key}` cannot be set directly; set `{owner}`"
            )));
        }
    }
    merge(&mut merged, file_doc.clone());
    let entries = flags.entries();
    for (key, value) in &entries {
        set(&mut merged, key, value.clone());
    }

    let mut config: RunConfig =
        serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    config.grpo.seed = config.seed;
    config.grpo.group_size = config.rollout.group_size;
    let mut forced = Vec::new();
    if config.env == "toy" {
        // The toy task has no user and runs on the bundled local database.
        config.rollout.user_mode = UserMode::None;
        config.rollout.tool_execution = ToolExecution::LocalEnv;
        forced = vec!["rollout.user_mode", "rollout.tool_execution"];
    }
    config
        .rollout
        .validate()
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    config
        .grpo
        .validate()
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;

    let resolved_value = serde_json::to_value(&config).expect("configs serialize");
    let mut keys = Vec::new();
    leaves(&resolved_value, "", &mut keys);
    let sources = keys
        .into_iter()
        .map(|k| {
            let src = if DERIVED.iter().any(|(d, _)| *d == k) || forced.contains(&k.as_str()) {
                Source::Derived
            } else if entries.iter().any(|(f, _)| *f == k) {
                Source::Flag
            } else if get(&file_doc, &k).is_some() {
                Source::File
            } else {
                Source::Default
            };
            (k, src)
        })
        .collect();
    Ok(Resolved {
        config,
        provenance: Provenance {
            config_file: config_file.map(Path::to_path_buf),
            overrides: entries.iter().map(|(k, v)| format!("{k} = {v}")).collect(),
            sources,
        },
    })
}
