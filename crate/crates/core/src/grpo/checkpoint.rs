use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::PolicyParams;
use super::trainer::GrpoConfig;
use super::GrpoError;
use crate::rollout::RolloutConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to continue training with an identical parameter
/// stream. Rollout randomness is derived from (seed, step), so no generator
/// state is stored. Floats round-trip exactly through the JSON encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub seed: u64,
    pub config: GrpoConfig,
    pub rollout: RolloutConfig,
    pub params: PolicyParams,
    pub reference: PolicyParams,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoints serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, GrpoError> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| GrpoError::Checkpoint(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(GrpoError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), GrpoError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| GrpoError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, GrpoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GrpoError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
