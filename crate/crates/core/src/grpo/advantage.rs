use serde::{Deserialize, Serialize};

use super::GrpoError;

/// Default floor below which a group's reward spread counts as zero.
pub const DEFAULT_STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    pub mean_r: f64,
    /// Population standard deviation of the rewards.
    pub std_r: f64,
    /// All advantages are exactly zero because the rewards did not vary.
    pub degenerate: bool,
}

/// Group-relative advantages `A_i = (r_i − mean) / std` with the population
/// standard deviation. Groups whose std falls below `std_floor` get all-zero
/// advantages and are flagged degenerate.
pub fn compute_advantages(rewards: &[f64], std_floor: f64) -> Result<AdvantageSet, GrpoError> {
    if rewards.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    let n = rewards.len() as f64;
    let mean_r = rewards.iter().sum::<f64>() / n;
    let std_r = (rewards.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / n).sqrt();
    let degenerate = std_r < std_floor;
    let advantages = if degenerate {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean_r) / std_r).collect()
    };
    Ok(AdvantageSet {
        advantages,
        mean_r,
        std_r,
        degenerate,
    })
}
