//! Function-calling tool declarations, the registry that validates them, and
//! the single execution entry point that touches a [`Database`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::db::Database;
use super::handlers::{self, Handler};
use super::EnvError;

/// Which channel a tool acts on. Only `Database` tools may read or write
/// the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SideChannel {
    #[default]
    Database,
    Calculate,
    Think,
    Transfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub parameters: Value,
    #[serde(default)]
    pub mutating: bool,
    #[serde(default)]
    pub side_channel: SideChannel,
    /// Execution semantics. When absent the tool must be a known builtin
    /// (by name) or a side-channel tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handler: Option<Handler>,
}

impl ToolSpec {
    /// Function declaration in chat-completions `tools` form.
    pub fn function_declaration(&self) -> Value {
        serde_json::json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        Self {
            name: name.into(),
            arguments,
        }
    }
}

/// Outcome of a tool invocation. Exactly one of payload / error text exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ToolResultWire", try_from = "ToolResultWire")]
pub enum ToolResult {
    Ok(Value),
    Err(String),
}

impl ToolResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, ToolResult::Ok(_))
    }

    pub fn payload(&self) -> Option<&Value> {
        match self {
            ToolResult::Ok(v) => Some(v),
            ToolResult::Err(_) => None,
        }
    }

    pub fn error_text(&self) -> Option<&str> {
        match self {
            ToolResult::Ok(_) => None,
            ToolResult::Err(e) => Some(e),
        }
    }

    /// The text an agent sees in the conversation.
    pub fn to_content(&self) -> String {
        match self {
            ToolResult::Ok(Value::String(s)) => s.clone(),
            ToolResult::Ok(Value::Null) => String::new(),
            ToolResult::Ok(v) => v.to_string(),
            ToolResult::Err(e) => e.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ToolResultWire {
    ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error_text: Option<String>,
}

impl From<ToolResult> for ToolResultWire {
    fn from(r: ToolResult) -> Self {
        match r {
            ToolResult::Ok(v) => ToolResultWire {
                ok: true,
                payload: Some(v),
                error_text: None,
            },
            ToolResult::Err(e) => ToolResultWire {
                ok: false,
                payload: None,
                error_text: Some(e),
            },
        }
    }
}

impl TryFrom<ToolResultWire> for ToolResult {
    type Error = String;

    fn try_from(w: ToolResultWire) -> Result<Self, Self::Error> {
        match (w.ok, w.payload, w.error_text) {
            (true, p, None) => Ok(ToolResult::Ok(p.unwrap_or(Value::Null))),
            (false, None, Some(e)) => Ok(ToolResult::Err(e)),
            _ => Err("tool result must carry exactly one of payload / error_text".into()),
        }
    }
}

struct Entry {
    spec: ToolSpec,
    handler: Handler,
    validator: jsonschema::Validator,
}

/// Immutable, name-unique set of tools with compiled argument validators.
pub struct ToolRegistry {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.entries.iter().map(|e| &e.spec.name))
            .finish()
    }
}

impl ToolRegistry {
    pub fn new(specs: Vec<ToolSpec>) -> Result<Self, EnvError> {
        let mut entries = Vec::with_capacity(specs.len());
        let mut index = HashMap::new();
        for spec in specs {
            if index.contains_key(&spec.name) {
                return Err(EnvError::DuplicateTool(spec.name));
            }
            let handler = handlers::resolve(&spec)?;
            if handler.is_mutating() != spec.mutating {
                return Err(EnvError::InvalidTool {
                    name: spec.name.clone(),
                    reason: format!(
                        "declared mutating={} but handler is {}",
                        spec.mutating,
                        if handler.is_mutating() {
                            "mutating"
                        } else {
                            "read-only"
                        }
                    ),
                });
            }
            if !spec.parameters.is_object() {
                return Err(EnvError::InvalidTool {
                    name: spec.name.clone(),
                    reason: "parameters must be a JSON-Schema object".into(),
                });
            }
            let validator =
                jsonschema::validator_for(&spec.parameters).map_err(|e| EnvError::InvalidTool {
                    name: spec.name.clone(),
                    reason: e.to_string(),
                })?;
            index.insert(spec.name.clone(), entries.len());
            entries.push(Entry {
                spec,
                handler,
                validator,
            });
        }
        Ok(Self { entries, index })
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.index.get(name).map(|&i| &self.entries[i].spec)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.entries.iter().map(|e| &e.spec)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.spec.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks `arguments` against the named tool's parameter schema.
    pub fn validate(&self, call: &ToolCall) -> Result<(), String> {
        let Some(&i) = self.index.get(&call.name) else {
            return Err(format!("Error: unknown tool {}", call.name));
        };
        if !call.arguments.is_object() {
            return Err(format!(
                "Error: invalid arguments for {}: arguments must be an object",
                call.name
            ));
        }
        self.entries[i]
            .validator
            .validate(&call.arguments)
            .map_err(|e| format!("Error: invalid arguments for {}: {}", call.name, e))
    }

    /// Executes one call against `db`.
    ///
    /// Every failure (unknown tool, bad arguments, domain rule violation) is
    /// returned as a `ToolResult::Err` so an agent can see it and recover.
    /// Mutations are atomic and only mutating tools can change `db`.
    pub fn execute(&self, db: &mut Database, call: &ToolCall) -> ToolResult {
        if let Err(e) = self.validate(call) {
            return ToolResult::Err(e);
        }
        let entry = &self.entries[self.index[&call.name]];
        let empty = Map::new();
        let args = call.arguments.as_object().unwrap_or(&empty);
        let out = if entry.handler.is_mutating() {
            db.transaction(|tables| entry.handler.write(tables, args))
        } else {
            entry.handler.read(db.tables(), args)
        };
        match out {
            Ok(v) => ToolResult::Ok(v),
            Err(e) => ToolResult::Err(e),
        }
    }
}

/// Free-function form of [`ToolRegistry::execute`].
pub fn execute_tool(db: &mut Database, call: &ToolCall, registry: &ToolRegistry) -> ToolResult {
    registry.execute(db, call)
}

/// Keeps only `keys` of an argument object, with keys in lexicographic order.
pub fn canonical_subset(args: &Value, keys: impl IntoIterator<Item = String>) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    if let Value::Object(map) = args {
        for k in keys {
            if let Some(v) = map.get(&k) {
                out.insert(k, v.clone());
            }
        }
    }
    out
}
