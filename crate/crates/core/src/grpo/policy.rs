use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrpoError;

/// One generated (or observed) token: the policy input state it was emitted
/// in, the emitted action, and the log-probabilities logged at sampling time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub context_id: usize,
    pub action_id: usize,
    pub logprob_old: f64,
    pub logprob_ref: f64,
    pub mask: bool,
}

impl TokenRecord {
    /// Placeholder for a token the policy did not generate (user text, tool
    /// output). Its values never reach the objective.
    pub fn observation() -> Self {
        Self {
            context_id: 0,
            action_id: 0,
            logprob_old: 0.0,
            logprob_ref: 0.0,
            mask: false,
        }
    }
}

/// Tabular softmax policy: one logit row per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub num_contexts: usize,
    pub num_actions: usize,
    /// Row-major `num_contexts × num_actions`.
    pub logits: Vec<f64>,
}

impl PolicyParams {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(num_contexts: usize, num_actions: usize) -> Self {
        Self {
            num_contexts,
            num_actions,
            logits: vec![0.0; num_contexts * num_actions],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GrpoError> {
        let num_actions = rows.first().map_or(0, Vec::len);
        if num_actions == 0 || rows.iter().any(|r| r.len() != num_actions) {
            return Err(GrpoError::Shape("rows must be non-empty and equally long".into()));
        }
        Ok(Self {
            num_contexts: rows.len(),
            num_actions,
            logits: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn same_shape(&self, other: &PolicyParams) -> bool {
        self.num_contexts == other.num_contexts && self.num_actions == other.num_actions
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.logits[c * self.num_actions..(c + 1) * self.num_actions]
    }

    pub fn index(&self, c: usize, a: usize) -> usize {
        c * self.num_actions + a
    }

    pub fn check(&self, c: usize, a: usize) -> Result<(), GrpoError> {
        if c >= self.num_contexts || a >= self.num_actions {
            return Err(GrpoError::OutOfRange {
                context: c,
                action: a,
            });
        }
        Ok(())
    }

    /// Numerically stable log-softmax of row `c`.
    pub fn log_probs(&self, c: usize) -> Vec<f64> {
        log_softmax(self.row(c))
    }

    pub fn probs(&self, c: usize) -> Vec<f64> {
        self.log_probs(c).into_iter().map(f64::exp).collect()
    }

    pub fn logprob(&self, c: usize, a: usize) -> f64 {
        self.log_probs(c)[a]
    }

    /// Samples an action from row `c` at `temperature` (0 means greedy).
    pub fn sample(&self, c: usize, temperature: f64, rng: &mut impl Rng) -> usize {
        let row = self.row(c);
        if temperature <= 0.0 {
            return argmax(row);
        }
        let scaled: Vec<f64> = row.iter().map(|l| l / temperature).collect();
        let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }

    pub fn argmax(&self, c: usize) -> usize {
        argmax(self.row(c))
    }

    /// Entropy of row `c` in nats.
    pub fn row_entropy(&self, c: usize) -> f64 {
        self.log_probs(c)
            .iter()
            .map(|&lp| {
                if lp == f64::NEG_INFINITY {
                    0.0
                } else {
                    -lp.exp() * lp
                }
            })
            .sum()
    }

    /// `θ ← θ + scale · grad`.
    pub fn add_scaled(&mut self, grad: &[f64], scale: f64) {
        for (t, g) in self.logits.iter_mut().zip(grad) {
            *t += scale * g;
        }
    }

    /// Total-variation distance between the two policies' row `c`.
    pub fn total_variation(&self, other: &PolicyParams, c: usize) -> f64 {
        let (p, q) = (self.probs(c), other.probs(c));
        0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Exact `KL(π_θ(·|c) ‖ π_ref(·|c))` for one row.
pub fn kl_row(theta: &PolicyParams, reference: &PolicyParams, c: usize) -> f64 {
    let lp = theta.log_probs(c);
    let lq = reference.log_probs(c);
    lp.iter()
        .zip(&lq)
        .map(|(&p, &q)| {
            if p == f64::NEG_INFINITY {
                0.0
            } else {
                p.exp() * (p - q)
            }
        })
        .sum()
}

/// Mean exact KL over the listed (visited) contexts; 0 for an empty list.
pub fn kl_term(theta: &PolicyParams, reference: &PolicyParams, contexts: &[usize]) -> Result<f64, GrpoError> {
    if !theta.same_shape(reference) {
        return Err(GrpoError::Shape(format!(
            "policy is {}x{}, reference is {}x{}",
            theta.num_contexts, theta.num_actions, reference.num_contexts, reference.num_actions
        )));
    }
    if contexts.is_empty() {
        return Ok(0.0);
    }
    for &c in contexts {
        theta.check(c, 0)?;
    }
    Ok(contexts.iter().map(|&c| kl_row(theta, reference, c)).sum::<f64>() / contexts.len() as f64)
}

/// Mean row entropy (nats) over the listed contexts; 0 for an empty list.
pub fn entropy(theta: &PolicyParams, contexts: &[usize]) -> f64 {
    if contexts.is_empty() {
        return 0.0;
    }
    contexts.iter().map(|&c| theta.row_entropy(c)).sum::<f64>() / contexts.len() as f64
}
