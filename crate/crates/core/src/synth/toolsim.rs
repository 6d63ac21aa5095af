//! Tool results during synthesis: either interpreted against the synthetic
//! memory or produced by a tool-role model shown that memory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::memory::SyntheticMemory;
use super::scenario::{handler_table, Scenario};
use super::SynthError;
use crate::clients::{ChatClient, ChatMessage, ChatRequest};
use crate::env::{Database, SnapshotStore, SnapshotToken, ToolCall, ToolRegistry, ToolResult, ToolSpec};
use crate::rollout::ToolBackend;

/// The bundled tool-role prompt (JSON, see [`ToolPromptTemplate`]).
pub const TOOL_PROMPT_TEMPLATE: &str = include_str!("../../fixtures/prompts/tool_simulator.v1.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolPromptTemplate {
    pub version: String,
    pub system: String,
    /// Upper bound on the serialized memory shown to the model.
    pub max_memory_chars: usize,
}

impl ToolPromptTemplate {
    pub fn bundled() -> Self {
        serde_json::from_str(TOOL_PROMPT_TEMPLATE).expect("bundled template parses")
    }
}

/// Compact view of the tables relevant to `spec` (its handler's table, or
/// every table when the tool has no handler). Records are added in key
/// order until the next one would exceed `max_chars`.
pub fn memory_view(spec: &ToolSpec, db: &Database, max_chars: usize) -> Value {
    let wanted = spec.handler.as_ref().and_then(handler_table);
    let mut out = Map::new();
    let mut used = 2;
    for (name, table) in db.tables() {
        if wanted.is_some_and(|w| w != name) {
            continue;
        }
        let mut records = Map::new();
        used += name.len() + 6;
        for (key, rec) in table {
            let cost = key.len() + rec.to_string().len() + 4;
            if used + cost > max_chars {
                break;
            }
            used += cost;
            records.insert(key.clone(), rec.clone());
        }
        out.insert(name.clone(), Value::Object(records));
    }
    Value::Object(out)
}

/// Reads a tool-role reply: the result wire form `{"ok": .., "payload" |
/// "error_text": ..}`, or any other JSON value as a successful payload.
/// Anything that is not JSON becomes an error result.
pub fn parse_tool_reply(text: &str) -> ToolResult {
    let trimmed = text.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed)
        .trim();
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return ToolResult::Err("Error: tool simulator returned unparseable output".into());
    };
    let is_wire = v.as_object().is_some_and(|o| {
        o.get("ok").is_some_and(Value::is_boolean)
            && o.keys()
                .all(|k| matches!(k.as_str(), "ok" | "payload" | "error_text"))
    });
    if is_wire {
        if let Ok(r) = serde_json::from_value::<ToolResult>(v.clone()) {
            return r;
        }
    }
    ToolResult::Ok(v)
}

/// A tool-role chat model.
#[derive(Debug, Clone)]
pub struct LlmToolModel {
    client: ChatClient,
    model: String,
    template: ToolPromptTemplate,
}

impl LlmToolModel {
    pub fn new(client: ChatClient, model: impl Into<String>, template: ToolPromptTemplate) -> Self {
        Self {
            client,
            model: model.into(),
            template,
        }
    }

    /// The request for one call: the system prompt, then a JSON document
    /// with `tool`, `memory` and `call`.
    pub fn request(&self, spec: &ToolSpec, call: &ToolCall, db: &Database) -> ChatRequest {
        let doc = json!({
            "tool": {
                "name": spec.name,
                "description": spec.description,
                "parameters": spec.parameters,
            },
            "memory": memory_view(spec, db, self.template.max_memory_chars),
            "call": {"name": call.name, "arguments": call.arguments},
        });
        ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage::system(self.template.system.clone()),
                ChatMessage::user(doc.to_string()),
            ],
            tools: None,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn simulate(&self, spec: &ToolSpec, call: &ToolCall, db: &Database) -> ToolResult {
        match self.client.chat(&self.request(spec, call, db)) {
            Ok(resp) => parse_tool_reply(resp.content.as_deref().unwrap_or_default()),
            Err(e) => ToolResult::Err(format!("Error: tool simulator unavailable: {e}")),
        }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // built once per run
pub enum ToolSimBackend {
    /// Deterministic execution with the environment's tool semantics.
    Interpreter,
    Llm(LlmToolModel),
}

/// The declaration of `call`'s tool, after checking the arguments against it.
fn checked<'s>(scenario: &'s Scenario, call: &ToolCall) -> Result<&'s ToolSpec, SynthError> {
    let spec = scenario
        .tool(&call.name)
        .ok_or_else(|| SynthError::UnknownTool(call.name.clone()))?;
    let validator = jsonschema::validator_for(&spec.parameters)
        .map_err(|e| SynthError::Scenario(format!("parameters of {}: {e}", spec.name)))?;
    validator
        .validate(&call.arguments)
        .map_err(|e| SynthError::InvalidArguments {
            tool: call.name.clone(),
            reason: e.to_string(),
        })?;
    Ok(spec)
}

fn run(
    scenario: &Scenario,
    registry: &ToolRegistry,
    call: &ToolCall,
    memory: &mut SyntheticMemory,
    backend: &ToolSimBackend,
) -> Result<ToolResult, SynthError> {
    let spec = checked(scenario, call)?;
    match backend {
        ToolSimBackend::Interpreter => {
            if !registry.contains(&call.name) {
                return Err(SynthError::NoInterpreter(call.name.clone()));
            }
            Ok(registry.execute(&mut memory.db, call))
        }
        // The model's view of the memory is read-only: writes it reports are
        // not applied back.
        ToolSimBackend::Llm(model) => Ok(model.simulate(spec, call, &memory.db)),
    }
}

/// Executes (or simulates) one call against `memory`.
pub fn simulate_tool(
    scenario: &Scenario,
    call: &ToolCall,
    memory: &mut SyntheticMemory,
    backend: &ToolSimBackend,
) -> Result<ToolResult, SynthError> {
    run(scenario, &scenario.interpreter_registry(), call, memory, backend)
}

/// [`ToolBackend`] over a scenario and its synthetic memory. Failures that
/// [`simulate_tool`] reports as errors reach the agent as error results.
pub struct SimulatedTools {
    scenario: Scenario,
    registry: ToolRegistry,
    memory: SyntheticMemory,
    backend: ToolSimBackend,
    snapshots: SnapshotStore,
}

impl SimulatedTools {
    pub fn new(scenario: Scenario, memory: SyntheticMemory, backend: ToolSimBackend) -> Self {
        Self {
            registry: scenario.interpreter_registry(),
            scenario,
            memory,
            backend,
            snapshots: SnapshotStore::new(),
        }
    }

    pub fn memory(&self) -> &SyntheticMemory {
        &self.memory
    }
}

impl ToolBackend for SimulatedTools {
    fn tool_specs(&self) -> Vec<ToolSpec> {
        self.scenario.tools.clone()
    }

    fn call(&mut self, call: &ToolCall) -> ToolResult {
        run(
            &self.scenario,
            &self.registry,
            call,
            &mut self.memory,
            &self.backend,
        )
        .unwrap_or_else(|e| ToolResult::Err(format!("Error: {e}")))
    }

    fn checkpoint(&mut self) -> Option<SnapshotToken> {
        Some(self.snapshots.snapshot(&self.memory.db))
    }

    fn rollback(&mut self, token: SnapshotToken) {
        if let Ok(db) = self.snapshots.restore(token) {
            self.memory.db = db;
        }
    }

    fn release(&mut self, token: SnapshotToken) {
        self.snapshots.release(token);
    }

    fn final_db(&self) -> Option<Database> {
        Some(self.memory.db.clone())
    }
}

/// Builds a database from a [`memory_view`] document.
pub fn database_from_view(view: &Value) -> Option<Database> {
    let tables: BTreeMap<String, BTreeMap<String, Value>> = serde_json::from_value(view.clone()).ok()?;
    Some(Database::from_tables(tables))
}
