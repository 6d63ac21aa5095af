//! Deterministic tool-calling environments.
//!
//! A [`DomainBundle`] is loaded once from a JSON document (`tools`,
//! `database`, `tasks`) and is immutable afterwards. Each rollout gets its
//! own [`DomainEnv`], which owns a private copy of the task's starting
//! database. Sharing happens only through the read-only bundle.

mod db;
mod handlers;
mod task;
mod tools;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

pub use db::{Database, SnapshotStore, SnapshotToken, Table};
pub use handlers::Handler;
pub use task::{
    criterion_satisfied, score_exchanges, values_match, RequiredAction, RewardResult, Task,
    VerificationCriterion, NUMERIC_TOLERANCE,
};
pub use tools::{canonical_subset, execute_tool, SideChannel, ToolCall, ToolRegistry, ToolResult, ToolSpec};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("failed to parse domain document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("duplicate tool name `{0}`")]
    DuplicateTool(String),
    #[error("invalid tool `{name}`: {reason}")]
    InvalidTool { name: String, reason: String },
    #[error("task `{task}`: criterion references missing `{target}`")]
    DanglingCriterion { task: String, target: String },
    #[error("task `{task}`: unknown initial database `{db}`")]
    UnknownDatabase { task: String, db: String },
    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),
    #[error("task `{0}` has no criteria")]
    EmptyCriteria(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("snapshot {0} is stale or was never taken")]
    StaleSnapshot(u64),
}

#[derive(Deserialize)]
struct BundleDoc {
    tools: Vec<ToolSpec>,
    database: BTreeMap<String, Table>,
    #[serde(default)]
    databases: BTreeMap<String, BTreeMap<String, Table>>,
    #[serde(default)]
    tasks: Vec<Task>,
}

/// Immutable domain: tool registry, named starting databases, task list.
#[derive(Debug, Clone)]
pub struct DomainBundle {
    registry: Arc<ToolRegistry>,
    databases: Arc<BTreeMap<String, Database>>,
    tasks: Arc<Vec<Task>>,
}

impl PartialEq for DomainBundle {
    fn eq(&self, other: &Self) -> bool {
        self.registry.specs().eq(other.registry.specs())
            && self.databases == other.databases
            && self.tasks == other.tasks
    }
}

/// Parses and validates a domain document.
pub fn load_domain(doc: &str) -> Result<DomainBundle, EnvError> {
    let doc: BundleDoc = serde_json::from_str(doc)?;
    let registry = ToolRegistry::new(doc.tools)?;
    let mut databases = BTreeMap::new();
    databases.insert("base".to_string(), Database::from_tables(doc.database));
    for (name, tables) in doc.databases {
        databases.insert(name, Database::from_tables(tables));
    }
    let mut seen = HashSet::new();
    for task in &doc.tasks {
        if !seen.insert(task.id.as_str()) {
            return Err(EnvError::DuplicateTask(task.id.clone()));
        }
        if task.criteria.is_empty() {
            return Err(EnvError::EmptyCriteria(task.id.clone()));
        }
        let db = databases
            .get(&task.initial_db)
            .ok_or_else(|| EnvError::UnknownDatabase {
                task: task.id.clone(),
                db: task.initial_db.clone(),
            })?;
        for c in task.checks() {
            check_criterion(&task.id, &c, db, &registry)?;
        }
    }
    Ok(DomainBundle {
        registry: Arc::new(registry),
        databases: Arc::new(databases),
        tasks: Arc::new(doc.tasks),
    })
}

pub fn load_domain_file(path: impl AsRef<Path>) -> Result<DomainBundle, EnvError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_domain(&text)
}

fn check_criterion(
    task: &str,
    c: &VerificationCriterion,
    db: &Database,
    registry: &ToolRegistry,
) -> Result<(), EnvError> {
    let dangling = |target: &str| EnvError::DanglingCriterion {
        task: task.to_string(),
        target: target.to_string(),
    };
    match c {
        VerificationCriterion::DbPathEquals { target, .. } => {
            // The record and its top-level field must exist at task start;
            // deeper segments may legitimately appear only after mutation.
            let mut parts = target.splitn(4, '.');
            let (table, id, field) = (parts.next(), parts.next(), parts.next());
            match (table, id, field) {
                (Some(t), Some(i), Some(f)) => {
                    let rec = db.record(t, i).ok_or_else(|| dangling(target))?;
                    if rec.get(f).is_none() {
                        return Err(dangling(target));
                    }
                }
                _ => return Err(dangling(target)),
            }
        }
        VerificationCriterion::DbRecordAbsent { target }
        | VerificationCriterion::DbRecordPresent { target } => {
            let table = target.split('.').next().unwrap_or_default();
            if db.table(table).is_none() || target.split('.').count() != 2 {
                return Err(dangling(target));
            }
        }
        VerificationCriterion::ActionPerformed { target, .. } => {
            if !registry.contains(target) {
                return Err(dangling(target));
            }
        }
    }
    Ok(())
}

impl DomainBundle {
    pub fn registry(&self) -> &Arc<ToolRegistry> {
        &self.registry
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn database(&self, name: &str) -> Option<&Database> {
        self.databases.get(name)
    }

    pub fn base_database(&self) -> &Database {
        &self.databases["base"]
    }

    /// Fresh environment for one rollout of `task`.
    pub fn instantiate(&self, task: &Task) -> Result<DomainEnv, EnvError> {
        let db = self
            .databases
            .get(&task.initial_db)
            .ok_or_else(|| EnvError::UnknownDatabase {
                task: task.id.clone(),
                db: task.initial_db.clone(),
            })?;
        Ok(DomainEnv::new(self.registry.clone(), db.clone()))
    }

    /// Scores a final database and executed tool exchanges against `task`.
    pub fn score_exchanges<'a>(
        &self,
        task: &Task,
        final_db: &Database,
        exchanges: impl IntoIterator<Item = (&'a ToolCall, &'a ToolResult)>,
    ) -> RewardResult {
        score_exchanges(task, final_db, &self.registry, exchanges)
    }
}

/// One rollout's private world: a database copy plus the shared registry.
#[derive(Debug)]
pub struct DomainEnv {
    registry: Arc<ToolRegistry>,
    db: Database,
    snapshots: SnapshotStore,
}

impl DomainEnv {
    pub fn new(registry: Arc<ToolRegistry>, db: Database) -> Self {
        Self {
            registry,
            db,
            snapshots: SnapshotStore::new(),
        }
    }

    pub fn registry(&self) -> &Arc<ToolRegistry> {
        &self.registry
    }

    pub fn db(&self) -> &Database {
        &self.db
    }

    pub fn into_db(self) -> Database {
        self.db
    }

    pub fn execute(&mut self, call: &ToolCall) -> ToolResult {
        self.registry.execute(&mut self.db, call)
    }

    pub fn snapshot(&mut self) -> SnapshotToken {
        self.snapshots.snapshot(&self.db)
    }

    /// Rolls the database back to `token`; later snapshots become stale.
    pub fn restore(&mut self, token: SnapshotToken) -> Result<&Database, EnvError> {
        self.db = self.snapshots.restore(token)?;
        Ok(&self.db)
    }

    pub fn release(&mut self, token: SnapshotToken) {
        self.snapshots.release(token);
    }
}

/// The bundled simplified retail domain.
pub const RETAIL_DOMAIN: &str = include_str!("../../fixtures/retail_domain.json");

/// Loads [`RETAIL_DOMAIN`].
pub fn retail_domain() -> DomainBundle {
    load_domain(RETAIL_DOMAIN).expect("bundled retail domain is valid")
}
