//! Synthesis scenarios: a domain policy, table schemas for the synthetic
//! memory, and the tools the agent may call.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SynthError;
use crate::env::{Handler, ToolRegistry, ToolSpec};

/// How one field of a generated record is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldSchema {
    /// `#` becomes a random digit, `@` a random uppercase letter; every other
    /// character is kept.
    Pattern {
        pattern: String,
    },
    /// One of the listed values.
    Choice {
        values: Vec<Value>,
    },
    Integer {
        min: i64,
        max: i64,
    },
    /// Uniform in `[min, max]`, rounded to `decimals` places.
    Number {
        min: f64,
        max: f64,
        #[serde(default = "two")]
        decimals: u32,
    },
    Boolean,
    /// `YYYY-MM-DD` with a year in `[min_year, max_year]` (days 1–28).
    Date {
        min_year: u32,
        max_year: u32,
    },
    /// The key of an existing record of `table`.
    Reference {
        table: String,
    },
    List {
        item: Box<FieldSchema>,
        #[serde(default)]
        min: usize,
        max: usize,
    },
}

fn two() -> u32 {
    2
}

impl FieldSchema {
    /// Tables this field refers to, directly or through list items.
    pub fn references(&self) -> Option<&str> {
        match self {
            FieldSchema::Reference { table } => Some(table),
            FieldSchema::List { item, .. } => item.references(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    /// Field holding the record key; generated from `key_pattern` and also
    /// stored inside the record.
    pub key: String,
    pub key_pattern: String,
    #[serde(default)]
    pub description: String,
    pub fields: BTreeMap<String, FieldSchema>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub domain_policy: String,
    #[serde(default)]
    pub schemas: BTreeMap<String, TableSchema>,
    pub tools: Vec<ToolSpec>,
    #[serde(default)]
    pub seed_queries: Vec<String>,
}

/// The table a handler reads or writes, if any.
pub fn handler_table(h: &Handler) -> Option<&str> {
    match h {
        Handler::Lookup { table, .. }
        | Handler::Find { table, .. }
        | Handler::Update { table, .. }
        | Handler::Insert { table, .. }
        | Handler::Delete { table, .. }
        | Handler::Append { table, .. } => Some(table),
        _ => None,
    }
}

impl Scenario {
    pub fn parse(json: &str) -> Result<Self, SynthError> {
        let s: Self = serde_json::from_str(json)?;
        s.validate()?;
        Ok(s)
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    /// Function declarations for a chat request.
    pub fn declarations(&self) -> Vec<Value> {
        self.tools.iter().map(ToolSpec::function_declaration).collect()
    }

    /// Checks tool schemas, unique names, reference targets, and that every
    /// schema table is used by some tool handler.
    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::Scenario(format!("{}: {m}", self.id)));
        let mut names = BTreeSet::new();
        for t in &self.tools {
            if !names.insert(t.name.as_str()) {
                return invalid(format!("duplicate tool {}", t.name));
            }
            if t.parameters.get("type").and_then(Value::as_str) != Some("object") {
                return invalid(format!("parameters of {} are not an object schema", t.name));
            }
            if let Err(e) = jsonschema::validator_for(&t.parameters) {
                return invalid(format!("parameters of {}: {e}", t.name));
            }
        }
        let used: BTreeSet<&str> = self
            .tools
            .iter()
            .filter_map(|t| t.handler.as_ref().and_then(handler_table))
            .collect();
        for (name, schema) in &self.schemas {
            if !used.contains(name.as_str()) {
                return invalid(format!("table {name} is not used by any tool"));
            }
            for (field, f) in &schema.fields {
                if let Some(target) = f.references() {
                    if !self.schemas.contains_key(target) {
                        return invalid(format!("{name}.{field} references unknown table {target}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// A registry over the tools that have interpreter semantics (a handler,
    /// a known builtin, or a side channel).
    pub fn interpreter_registry(&self) -> ToolRegistry {
        let runnable = self
            .tools
            .iter()
            .filter(|t| ToolRegistry::new(vec![(*t).clone()]).is_ok())
            .cloned()
            .collect();
        ToolRegistry::new(runnable).expect("each tool was checked on its own")
    }
}
