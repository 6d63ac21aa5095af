//! SFT corpus export: one conversation per JSONL line in chat form.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::pipeline::{SynthTrajectory, Verdict};
use super::SynthError;
use crate::clients::{chat_transcript, transcript_from_chat, ChatMessage};
use crate::rollout::Termination;

/// One corpus line. Messages use the chat-completions roles; each also
/// carries `turn`/`tokens` (and tool messages the structured `result`) so
/// the rollout transcript can be rebuilt exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub scenario_id: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub tools: Vec<Value>,
    pub termination: Termination,
    #[serde(default)]
    pub judge_rationale: String,
}

impl SftRecord {
    pub fn from_trajectory(t: &SynthTrajectory) -> Self {
        Self {
            scenario_id: t.scenario_id.clone(),
            messages: chat_transcript(&t.messages, true),
            tools: t.tools.clone(),
            termination: t.termination,
            judge_rationale: t.judge_rationale.clone(),
        }
    }

    pub fn to_trajectory(&self) -> Result<SynthTrajectory, SynthError> {
        Ok(SynthTrajectory {
            scenario_id: self.scenario_id.clone(),
            messages: transcript_from_chat(&self.messages)?,
            termination: self.termination,
            tools: self.tools.clone(),
            verdict: Verdict::Accepted,
            judge_rationale: self.judge_rationale.clone(),
            rule_violations: Vec::new(),
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes accepted trajectories to `path` (replacing it). Refuses the whole
/// batch if any trajectory is not accepted. Returns the line count.
pub fn export_sft(trajectories: &[SynthTrajectory], path: &Path) -> Result<usize, SynthError> {
    if let Some((index, t)) = trajectories
        .iter()
        .enumerate()
        .find(|(_, t)| t.verdict != Verdict::Accepted)
    {
        return Err(SynthError::NotAccepted {
            index,
            verdict: t.verdict,
        });
    }
    let mut text = String::new();
    for t in trajectories {
        text.push_str(&serde_json::to_string(&SftRecord::from_trajectory(t))?);
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))?;
    Ok(trajectories.len())
}

/// Reads a corpus written by [`export_sft`].
pub fn import_sft(path: &Path) -> Result<Vec<SynthTrajectory>, SynthError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<SftRecord>(l)?.to_trajectory())
        .collect()
}
