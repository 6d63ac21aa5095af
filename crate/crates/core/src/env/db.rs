//! In-memory relational store backing a domain environment.
//!
//! Tables map record ids to JSON records. The only way to change a
//! [`Database`] from outside this crate is through tool execution, which
//! goes through [`Database::transaction`]: a failed mutation is rolled back
//! and leaves the store deep-equal to its pre-call state.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::EnvError;

/// Records of one table keyed by record id.
pub type Table = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Database {
    tables: BTreeMap<String, Table>,
    #[serde(default)]
    version: u64,
}

impl Database {
    pub fn from_tables(tables: BTreeMap<String, Table>) -> Self {
        Self { tables, version: 0 }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tables(&self) -> &BTreeMap<String, Table> {
        &self.tables
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn record(&self, table: &str, id: &str) -> Option<&Value> {
        self.tables.get(table)?.get(id)
    }

    /// Resolves a dotted path `table.record_id.field[.subfield...]`.
    ///
    /// Numeric segments index into arrays. Record ids may not contain dots.
    pub fn resolve(&self, path: &str) -> Option<&Value> {
        let mut parts = path.split('.');
        let table = parts.next()?;
        let id = parts.next()?;
        let mut cur = self.record(table, id)?;
        for seg in parts {
            cur = match cur {
                Value::Object(map) => map.get(seg)?,
                Value::Array(items) => items.get(seg.parse::<usize>().ok()?)?,
                _ => return None,
            };
        }
        Some(cur)
    }

    /// SHA-256 over the canonical JSON of the table contents (version excluded).
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.tables).expect("tables serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Runs `f` against a scratch copy of the tables. The copy is committed
    /// (and the version bumped) only if `f` returns `Ok` and actually changed
    /// something.
    pub(crate) fn transaction<T, E>(
        &mut self,
        f: impl FnOnce(&mut BTreeMap<String, Table>) -> Result<T, E>,
    ) -> Result<T, E> {
        let mut scratch = self.tables.clone();
        let out = f(&mut scratch)?;
        if scratch != self.tables {
            self.tables = scratch;
            self.version += 1;
        }
        Ok(out)
    }
}

/// Opaque handle to a saved database state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SnapshotToken(u64);

/// Savepoint store: restoring a snapshot invalidates every snapshot taken
/// after it, and released tokens are stale.
#[derive(Debug, Default)]
pub struct SnapshotStore {
    next: u64,
    saved: HashMap<u64, Arc<Database>>,
}

impl SnapshotStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&mut self, db: &Database) -> SnapshotToken {
        let id = self.next;
        self.next += 1;
        self.saved.insert(id, Arc::new(db.clone()));
        SnapshotToken(id)
    }

    pub fn restore(&mut self, token: SnapshotToken) -> Result<Database, EnvError> {
        let db = self
            .saved
            .get(&token.0)
            .cloned()
            .ok_or(EnvError::StaleSnapshot(token.0))?;
        self.saved.retain(|&id, _| id <= token.0);
        Ok((*db).clone())
    }

    pub fn release(&mut self, token: SnapshotToken) {
        self.saved.remove(&token.0);
    }

    pub fn is_live(&self, token: SnapshotToken) -> bool {
        self.saved.contains_key(&token.0)
    }
}
