use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::message::Trajectory;
use super::RolloutError;
use crate::env::RewardResult;

/// One persisted trajectory line: the trajectory plus its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    #[serde(flatten)]
    pub trajectory: Trajectory,
    pub reward: u8,
    pub tcr: f64,
    #[serde(default)]
    pub satisfied: Vec<bool>,
}

impl TrajectoryRecord {
    pub fn new(trajectory: Trajectory, result: &RewardResult) -> Self {
        Self {
            trajectory,
            reward: result.reward,
            tcr: result.tcr,
            satisfied: result.satisfied.clone(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RolloutError + '_ {
    move |source| RolloutError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Appends one JSON line per record to `path`, creating it if needed.
pub fn write_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<(), RolloutError> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("trajectory records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads every non-blank line of a trajectory JSONL file.
pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>, RolloutError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|source| RolloutError::Parse { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}
