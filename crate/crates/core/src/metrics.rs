//! Training-dynamics metrics and the append-only metrics log.
//!
//! All functions are pure over completed data. The 4-gram ratio is computed
//! over whatever token ids the caller supplies (policy action ids for the
//! tabular policy), so values are comparable only within one run.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rollout::Trajectory;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty reward matrix")]
    Empty,
    #[error("reward matrix rows differ in length")]
    Ragged,
    #[error("reward {0} is not binary")]
    NotBinary(u8),
    #[error("step {step} does not follow previous step {last}")]
    StepOrder { step: u64, last: u64 },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed metrics line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// Per-step training summary; one JSON line per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub mean_entropy: f64,
    pub kl_value: f64,
    pub grad_norm: f64,
    pub mean_turns: f64,
    pub mean_response_tokens: f64,
    pub unique_4gram_ratio: f64,
    pub all_correct_ratio: f64,
    pub all_wrong_ratio: f64,
    pub tool_counts: BTreeMap<String, f64>,
    /// Mean reward over every rollout of the step.
    pub mean_reward: f64,
    pub objective: f64,
}

/// Distinct sliding 4-grams over the number of windows; sequences shorter
/// than four tokens score 1.0.
pub fn unique_4gram_ratio<T: Eq + std::hash::Hash>(tokens: &[T]) -> f64 {
    if tokens.len() < 4 {
        return 1.0;
    }
    let windows = tokens.windows(4);
    let total = windows.len();
    let distinct: HashSet<&[T]> = windows.collect();
    distinct.len() as f64 / total as f64
}

fn check_matrix(rewards: &[Vec<u8>]) -> Result<(), MetricsError> {
    let first = rewards.first().ok_or(MetricsError::Empty)?;
    if first.is_empty() {
        return Err(MetricsError::Empty);
    }
    for row in rewards {
        if row.len() != first.len() {
            return Err(MetricsError::Ragged);
        }
        if let Some(&r) = row.iter().find(|&&r| r > 1) {
            return Err(MetricsError::NotBinary(r));
        }
    }
    Ok(())
}

/// Fraction of tasks (rows) whose rollouts all succeeded.
pub fn all_correct_ratio(rewards: &[Vec<u8>]) -> Result<f64, MetricsError> {
    check_matrix(rewards)?;
    let n = rewards.iter().filter(|row| row.iter().all(|&r| r == 1)).count();
    Ok(n as f64 / rewards.len() as f64)
}

/// Fraction of tasks (rows) whose rollouts all failed.
pub fn all_wrong_ratio(rewards: &[Vec<u8>]) -> Result<f64, MetricsError> {
    check_matrix(rewards)?;
    let n = rewards.iter().filter(|row| row.iter().all(|&r| r == 0)).count();
    Ok(n as f64 / rewards.len() as f64)
}

/// Mean tool invocations per trajectory, by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCounts {
    /// Number of trajectories averaged over; zero means no data.
    pub samples: usize,
    pub counts: BTreeMap<String, f64>,
}

pub fn tool_counts(trajectories: &[Trajectory], names: &[&str]) -> ToolCounts {
    if trajectories.is_empty() {
        return ToolCounts {
            samples: 0,
            counts: BTreeMap::new(),
        };
    }
    let mut counts: BTreeMap<String, f64> = names.iter().map(|n| (n.to_string(), 0.0)).collect();
    for t in trajectories {
        for call in t.tool_calls() {
            if let Some(c) = counts.get_mut(&call.name) {
                *c += 1.0;
            }
        }
    }
    let n = trajectories.len() as f64;
    counts.values_mut().for_each(|c| *c /= n);
    ToolCounts {
        samples: trajectories.len(),
        counts,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Append-only metrics JSONL writer that enforces strictly increasing steps,
/// including across reopenings of an existing file.
#[derive(Debug)]
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    last: Option<u64>,
}

impl MetricsWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let path = path.as_ref().to_path_buf();
        let last = if path.exists() {
            read_metrics(&path)?.last().map(|r| r.step)
        } else {
            None
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self { path, file, last })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<(), MetricsError> {
        if let Some(last) = self.last {
            if record.step <= last {
                return Err(MetricsError::StepOrder {
                    step: record.step,
                    last,
                });
            }
        }
        let line = serde_json::to_string(record).expect("metrics records serialize");
        writeln!(self.file, "{line}").map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.last = Some(record.step);
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, MetricsError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| MetricsError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}
