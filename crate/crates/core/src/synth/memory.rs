//! Small synthetic databases ("memory") generated from scenario schemas.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::scenario::{FieldSchema, Scenario, TableSchema};
use super::SynthError;
use crate::env::{Database, Table};

pub const MEMORY_GENERATOR_VERSION: &str = "memory.v1";

/// Attempts at drawing a fresh key before the key pattern is declared too
/// narrow for the requested record count.
const KEY_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub min_records: usize,
    pub max_records: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            min_records: 1,
            max_records: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMemory {
    pub db: Database,
    pub provenance: Provenance,
}

/// Tables in an order where every required reference points backwards.
fn generation_order(scenario: &Scenario) -> Result<Vec<&str>, SynthError> {
    let mut order = Vec::new();
    let mut done = BTreeSet::new();
    while done.len() < scenario.schemas.len() {
        let ready: Vec<&str> = scenario
            .schemas
            .iter()
            .filter(|(name, _)| !done.contains(name.as_str()))
            .filter(|(name, s)| {
                s.fields
                    .values()
                    .filter_map(FieldSchema::references)
                    .all(|t| done.contains(t) || t == name.as_str())
            })
            .map(|(name, _)| name.as_str())
            .collect();
        if ready.is_empty() {
            return Err(SynthError::Unsatisfiable("table references form a cycle".into()));
        }
        for r in ready {
            done.insert(r);
            order.push(r);
        }
    }
    Ok(order)
}

fn fill_pattern(pattern: &str, rng: &mut ChaCha8Rng) -> String {
    pattern
        .chars()
        .map(|c| match c {
            '#' => char::from(b'0' + rng.gen_range(0..10u8)),
            '@' => char::from(b'A' + rng.gen_range(0..26u8)),
            c => c,
        })
        .collect()
}

fn gen_field(
    f: &FieldSchema,
    keys: &BTreeMap<&str, Vec<String>>,
    rng: &mut ChaCha8Rng,
    at: &str,
) -> Result<Value, SynthError> {
    let bad = |m: &str| Err(SynthError::Unsatisfiable(format!("{at}: {m}")));
    Ok(match f {
        FieldSchema::Pattern { pattern } => Value::String(fill_pattern(pattern, rng)),
        FieldSchema::Choice { values } => match values.choose(rng) {
            Some(v) => v.clone(),
            None => return bad("choice list is empty"),
        },
        FieldSchema::Integer { min, max } => {
            if min > max {
                return bad("integer range is empty");
            }
            json!(rng.gen_range(*min..=*max))
        }
        FieldSchema::Number { min, max, decimals } => {
            if min.is_nan() || max.is_nan() || min > max {
                return bad("number range is empty");
            }
            let scale = 10f64.powi(*decimals as i32);
            let x = rng.gen_range(*min..=*max);
            let rounded = ((x * scale).round() / scale).clamp(*min, *max);
            json!(rounded)
        }
        FieldSchema::Boolean => json!(rng.gen_bool(0.5)),
        FieldSchema::Date { min_year, max_year } => {
            if min_year > max_year {
                return bad("year range is empty");
            }
            let y = rng.gen_range(*min_year..=*max_year);
            let m = rng.gen_range(1..=12u32);
            let d = rng.gen_range(1..=28u32);
            json!(format!("{y:04}-{m:02}-{d:02}"))
        }
        FieldSchema::Reference { table } => match keys.get(table.as_str()).and_then(|k| k.choose(rng)) {
            Some(k) => json!(k),
            None => return bad(&format!("no {table} record to reference")),
        },
        FieldSchema::List { item, min, max } => {
            if min > max {
                return bad("list length range is empty");
            }
            let target_empty = item
                .references()
                .is_some_and(|t| keys.get(t).is_none_or(|k| k.is_empty()));
            let n = if target_empty && *min == 0 {
                0
            } else {
                rng.gen_range(*min..=*max)
            };
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                items.push(gen_field(item, keys, rng, at)?);
            }
            Value::Array(items)
        }
    })
}

fn gen_table<'a>(
    name: &'a str,
    schema: &TableSchema,
    count: usize,
    keys: &mut BTreeMap<&'a str, Vec<String>>,
    rng: &mut ChaCha8Rng,
) -> Result<Table, SynthError> {
    let mut fresh = BTreeSet::new();
    let mut order = Vec::with_capacity(count);
    for _ in 0..count {
        let key = (0..KEY_ATTEMPTS)
            .map(|_| fill_pattern(&schema.key_pattern, rng))
            .find(|k| !fresh.contains(k))
            .ok_or_else(|| {
                SynthError::Unsatisfiable(format!(
                    "{name}: key pattern {} cannot yield {count} distinct keys",
                    schema.key_pattern
                ))
            })?;
        fresh.insert(key.clone());
        order.push(key);
    }
    // Self references may point at any record of the table being built.
    let mut view = keys.clone();
    view.insert(name, order.clone());
    let mut table = Table::new();
    for key in order.iter() {
        let mut rec = Map::new();
        rec.insert(schema.key.clone(), json!(key));
        for (field, f) in &schema.fields {
            rec.insert(
                field.clone(),
                gen_field(f, &view, rng, &format!("{name}.{field}"))?,
            );
        }
        table.insert(key.clone(), Value::Object(rec));
    }
    keys.insert(name, order);
    Ok(table)
}

/// Generates a schema-valid memory. The same `(scenario, seed, cfg)` always
/// yields the same database.
pub fn generate_memory(
    scenario: &Scenario,
    seed: u64,
    cfg: &MemoryConfig,
) -> Result<SyntheticMemory, SynthError> {
    if cfg.min_records > cfg.max_records {
        return Err(SynthError::Unsatisfiable(
            "min_records exceeds max_records".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut tables = BTreeMap::new();
    for name in generation_order(scenario)? {
        let schema = &scenario.schemas[name];
        let count = rng.gen_range(cfg.min_records..=cfg.max_records);
        tables.insert(
            name.to_string(),
            gen_table(name, schema, count, &mut keys, &mut rng)?,
        );
    }
    let memory = SyntheticMemory {
        db: Database::from_tables(tables),
        provenance: Provenance {
            seed,
            generator: MEMORY_GENERATOR_VERSION.into(),
        },
    };
    validate_memory(scenario, &memory.db)?;
    Ok(memory)
}

fn field_ok(f: &FieldSchema, v: &Value, db: &Database) -> bool {
    match f {
        FieldSchema::Pattern { pattern } => v.as_str().is_some_and(|s| {
            s.chars().count() == pattern.chars().count()
                && s.chars().zip(pattern.chars()).all(|(c, p)| match p {
                    '#' => c.is_ascii_digit(),
                    '@' => c.is_ascii_uppercase(),
                    p => c == p,
                })
        }),
        FieldSchema::Choice { values } => values.contains(v),
        FieldSchema::Integer { min, max } => v.as_i64().is_some_and(|x| (*min..=*max).contains(&x)),
        FieldSchema::Number { min, max, .. } => v.as_f64().is_some_and(|x| x >= *min && x <= *max),
        FieldSchema::Boolean => v.is_boolean(),
        FieldSchema::Date { min_year, max_year } => v.as_str().is_some_and(|s| {
            let parts: Vec<_> = s.split('-').collect();
            parts.len() == 3
                && parts[0]
                    .parse::<u32>()
                    .is_ok_and(|y| (*min_year..=*max_year).contains(&y))
                && parts[1].parse::<u32>().is_ok_and(|m| (1..=12).contains(&m))
                && parts[2].parse::<u32>().is_ok_and(|d| (1..=31).contains(&d))
        }),
        FieldSchema::Reference { table } => v.as_str().is_some_and(|k| db.record(table, k).is_some()),
        FieldSchema::List { item, min, max } => v
            .as_array()
            .is_some_and(|a| a.len() >= *min && a.len() <= *max && a.iter().all(|x| field_ok(item, x, db))),
    }
}

/// Checks every record of `db` against the scenario schemas, including
/// referential integrity.
pub fn validate_memory(scenario: &Scenario, db: &Database) -> Result<(), SynthError> {
    for (name, schema) in &scenario.schemas {
        let Some(table) = db.table(name) else {
            return Err(SynthError::InvalidMemory(format!("missing table {name}")));
        };
        for (key, rec) in table {
            if rec.get(&schema.key) != Some(&json!(key)) {
                return Err(SynthError::InvalidMemory(format!(
                    "{name}/{key}: key field mismatch"
                )));
            }
            for (field, f) in &schema.fields {
                match rec.get(field) {
                    Some(v) if field_ok(f, v, db) => {}
                    _ => {
                        return Err(SynthError::InvalidMemory(format!(
                            "{name}/{key}.{field} violates its schema"
                        )))
                    }
                }
            }
        }
    }
    Ok(())
}
