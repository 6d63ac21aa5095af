use serde::{Deserialize, Serialize};

use super::advantage::AdvantageSet;
use super::policy::{kl_row, PolicyParams, TokenRecord};
use super::GrpoError;

/// One sampled response `y_i` for query `q`, as logged token records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub query_id: String,
    pub tokens: Vec<TokenRecord>,
    pub reward: u8,
}

impl SequenceSample {
    pub fn masked(&self) -> impl Iterator<Item = &TokenRecord> {
        self.tokens.iter().filter(|t| t.mask)
    }

    pub fn has_masked(&self) -> bool {
        self.tokens.iter().any(|t| t.mask)
    }
}

/// The samples of one group together with their advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSamples {
    pub samples: Vec<SequenceSample>,
    pub advantages: AdvantageSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveOutput {
    pub objective: f64,
    /// Gradient with respect to the logits, same layout as `PolicyParams::logits`.
    pub gradient: Vec<f64>,
    /// Batch mean (group-then-batch) of the per-sample KL terms.
    pub kl: f64,
    /// Fraction of samples whose surrogate took the clipped branch.
    pub clip_fraction: f64,
}

/// `exp(Σ_masked [log π_θ(a|c) − logprob_old])`. Unmasked tokens are skipped.
pub fn sequence_ratio(sample: &SequenceSample, theta: &PolicyParams) -> Result<f64, GrpoError> {
    let mut s = 0.0;
    for t in sample.masked() {
        theta.check(t.context_id, t.action_id)?;
        s += theta.logprob(t.context_id, t.action_id) - t.logprob_old;
    }
    Ok(s.exp())
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`, and whether the unclipped branch is active.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// The group-relative clipped objective with KL penalty, and its exact
/// gradient with respect to `theta`'s logits.
///
/// Per sample: `min(ρA, clip(ρ)A) − β·KL`, where `ρ` is the sequence-level
/// ratio over masked tokens and `KL` is the exact categorical KL to
/// `reference` averaged over the contexts of the sample's masked tokens.
/// Terms are averaged within each group, then over groups.
pub fn grpo_objective(
    groups: &[GroupSamples],
    theta: &PolicyParams,
    reference: &PolicyParams,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveOutput, GrpoError> {
    if !theta.same_shape(reference) {
        return Err(GrpoError::Shape("policy and reference shapes differ".into()));
    }
    let n = theta.num_actions;
    // Per-context log-probabilities are shared by every token in that context.
    let lp_theta: Vec<Vec<f64>> = (0..theta.num_contexts).map(|c| theta.log_probs(c)).collect();
    let lp_ref: Vec<Vec<f64>> = (0..theta.num_contexts).map(|c| reference.log_probs(c)).collect();

    let mut gradient = vec![0.0; theta.len()];
    let (mut objective, mut kl_total) = (0.0, 0.0);
    let (mut clipped, mut total) = (0usize, 0usize);
    let batch_weight = 1.0 / groups.len().max(1) as f64;

    for group in groups {
        if group.samples.len() != group.advantages.advantages.len() {
            return Err(GrpoError::Shape(format!(
                "{} samples but {} advantages",
                group.samples.len(),
                group.advantages.advantages.len()
            )));
        }
        let w = batch_weight / group.samples.len().max(1) as f64;
        for (i, (sample, &adv)) in group.samples.iter().zip(&group.advantages.advantages).enumerate() {
            let masked: Vec<&TokenRecord> = sample.masked().collect();
            let mut log_ratio = 0.0;
            for t in &masked {
                theta.check(t.context_id, t.action_id)?;
                log_ratio += lp_theta[t.context_id][t.action_id] - t.logprob_old;
            }
            let ratio = log_ratio.exp();
            let (surrogate, active) = clipped_surrogate(ratio, adv, cfg.clip_epsilon);

            let kl_rows: Vec<f64> = masked
                .iter()
                .map(|t| kl_row(theta, reference, t.context_id))
                .collect();
            let kl = if masked.is_empty() {
                0.0
            } else {
                kl_rows.iter().sum::<f64>() / masked.len() as f64
            };
            let term = surrogate - cfg.kl_beta * kl;
            if !term.is_finite() {
                return Err(GrpoError::NonFinite {
                    sample: format!("{}#{}", sample.query_id, i),
                });
            }
            objective += w * term;
            kl_total += w * kl;
            total += 1;
            clipped += usize::from(!active);

            // d/dθ_{c,k} log π(a|c) = 1[k=a] − p_k, so dρ = ρ Σ_t (e_{a_t} − p_{c_t}).
            if active && adv != 0.0 {
                let scale = w * adv * ratio;
                for t in &masked {
                    let row = &lp_theta[t.context_id];
                    let base = t.context_id * n;
                    for k in 0..n {
                        gradient[base + k] -= scale * row[k].exp();
                    }
                    gradient[base + t.action_id] += scale;
                }
            }
            // d/dθ_{c,j} KL(p‖q) = p_j (log p_j − log q_j − KL).
            if cfg.kl_beta != 0.0 && !masked.is_empty() {
                let scale = w * cfg.kl_beta / masked.len() as f64;
                for (t, kl_c) in masked.iter().zip(&kl_rows) {
                    let (p, q) = (&lp_theta[t.context_id], &lp_ref[t.context_id]);
                    let base = t.context_id * n;
                    for j in 0..n {
                        gradient[base + j] -= scale * p[j].exp() * (p[j] - q[j] - kl_c);
                    }
                }
            }
        }
    }
    Ok(ObjectiveOutput {
        objective,
        gradient,
        kl: kl_total,
        clip_fraction: if total == 0 {
            0.0
        } else {
            clipped as f64 / total as f64
        },
    })
}
