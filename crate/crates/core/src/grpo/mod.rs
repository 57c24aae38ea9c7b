//! Pure numerical kernels for the GRPO objective and its modifications:
//! clipped surrogate with asymmetric clip bounds, truncated importance
//! sampling, k3 KL penalty, entropy term, cross-entropy on positive
//! samples, and the balanced data-parallel token normalization.
//!
//! These are forward-value contracts; no autodiff or optimizer steps.

pub mod sampling;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sampling::{assemble_batch, AssembledBatch, GenerationCache, SamplingStrategy};

/// Per-token log-probabilities under the training, old, rollout and
/// (optional) reference policies, plus the loss mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSample {
    #[serde(rename = "lt")]
    pub logp_theta: f64,
    #[serde(rename = "lo")]
    pub logp_old: f64,
    #[serde(rename = "lr")]
    pub logp_rollout: f64,
    #[serde(rename = "lf", default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<f64>,
    #[serde(rename = "m")]
    pub mask: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResponse {
    pub tokens: Vec<TokenSample>,
    pub reward: f64,
}

/// G responses to one prompt with scalar rewards: the input to all GRPO
/// kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub responses: Vec<RolloutResponse>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.reward).collect()
    }

    /// True when all rewards are equal: the group carries no
    /// policy-gradient signal.
    pub fn is_zero_advantage(&self) -> bool {
        self.responses
            .windows(2)
            .all(|w| w[0].reward == w[1].reward)
    }
}

/// Wire form of the JSONL fixture format:
/// `{"prompt_id","rewards":[...],"tokens":[[{"lt","lo","lr","m"},...],...]}`.
#[derive(Debug, Serialize, Deserialize)]
struct GroupWire {
    prompt_id: String,
    rewards: Vec<f64>,
    tokens: Vec<Vec<TokenSample>>,
}

impl RolloutGroup {
    pub fn to_jsonl(&self) -> String {
        let wire = GroupWire {
            prompt_id: self.prompt_id.clone(),
            rewards: self.rewards(),
            tokens: self.responses.iter().map(|r| r.tokens.clone()).collect(),
        };
        serde_json::to_string(&wire).expect("serializable")
    }

    pub fn from_jsonl(line: &str) -> Result<Self> {
        let wire: GroupWire = serde_json::from_str(line)?;
        if wire.rewards.len() != wire.tokens.len() {
            return Err(Error::invalid("rewards and tokens length mismatch"));
        }
        Ok(RolloutGroup {
            prompt_id: wire.prompt_id,
            responses: wire
                .rewards
                .into_iter()
                .zip(wire.tokens)
                .map(|(reward, tokens)| RolloutResponse { tokens, reward })
                .collect(),
        })
    }
}

/// GRPO hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tis_cap: f64,
    pub advantage_std_floor: f64,
    pub group_size: usize,
    pub ce_weight: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            eps_low: 0.2,
            eps_high: 0.28,
            beta: 0.0,
            gamma: 0.0,
            tis_cap: 2.0,
            advantage_std_floor: 1e-6,
            group_size: 16,
            ce_weight: 0.1,
        }
    }
}

/// Loss components. `total` is minimized:
/// `total = -surrogate + beta*kl - gamma*entropy + ce_weight*ce_positive`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub surrogate: f64,
    pub kl: f64,
    pub entropy: f64,
    pub ce_positive: f64,
    pub total: f64,
}

/// Group-relative advantages: `(r_i - mean) / std` with population std.
/// A group whose reward std is below `std_floor` yields all-zero
/// advantages.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::invalid("advantage computation needs >= 2 rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Clipped surrogate with TIS correction for one token.
///
/// `ratio = exp(lt - lo)`; the surrogate is
/// `min(ratio*A, clamp(ratio, 1-eps_low, 1+eps_high)*A)`, scaled by the
/// truncated importance weight `min(exp(lo - lr), tis_cap)`, which is a
/// constant multiplier (carries no gradient).
pub fn per_token_objective(
    logp_theta: f64,
    logp_old: f64,
    logp_rollout: f64,
    advantage: f64,
    cfg: &GrpoConfig,
) -> f64 {
    let ratio = (logp_theta - logp_old).exp();
    let clipped = ratio.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    let surrogate = (ratio * advantage).min(clipped * advantage);
    let tis = (logp_old - logp_rollout).exp().min(cfg.tis_cap);
    tis * surrogate
}

/// k3 KL estimator: `r - ln r - 1` with `r = exp(logp_ref - logp_theta)`.
/// Non-negative, zero only at identical log-probabilities.
pub fn kl_k3(logp_theta: f64, logp_ref: f64) -> f64 {
    let log_r = logp_ref - logp_theta;
    log_r.exp() - log_r - 1.0
}

/// Shannon entropy in nats of a (possibly truncated) candidate
/// distribution, renormalized to sum to 1.
pub fn token_entropy(candidate_logprobs: &[f64]) -> Result<f64> {
    if candidate_logprobs.is_empty() {
        return Err(Error::invalid("candidate_logprobs must be non-empty"));
    }
    let probs: Vec<f64> = candidate_logprobs.iter().map(|lp| lp.exp()).collect();
    let z: f64 = probs.iter().sum();
    if z <= 0.0 {
        return Err(Error::invalid("candidate probabilities sum to zero"));
    }
    let mut h = 0.0;
    for p in probs {
        let q = p / z;
        if q > 0.0 {
            h -= q * q.ln();
        }
    }
    Ok(h.max(0.0))
}

/// Cross-entropy over masked tokens of positive (reward 1) responses:
/// `-(mean of logp_theta)`. Zero when no positive response has valid
/// tokens.
pub fn ce_on_positives(group: &RolloutGroup) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for resp in &group.responses {
        if (resp.reward - 1.0).abs() > 1e-9 {
            continue;
        }
        for tok in &resp.tokens {
            if tok.mask == 1 {
                sum += tok.logp_theta;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        -sum / count as f64
    }
}

/// Full GRPO loss over one rollout group: sequence-then-group averaging
/// (`1/G * sum_i 1/|o_i| * sum_t`), KL and the per-token entropy
/// estimate aggregated identically.
///
/// The entropy term uses the single-sample estimate `-logp_theta`, since
/// rollout fixtures carry only chosen-token log-probabilities.
pub fn grpo_loss(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<LossBreakdown> {
    if group.responses.len() < 2 {
        return Err(Error::invalid("group must contain >= 2 responses"));
    }
    let advantages = group_advantages(&group.rewards(), cfg.advantage_std_floor)?;
    let g = group.responses.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut entropy = 0.0;
    for (resp, &adv) in group.responses.iter().zip(&advantages) {
        let valid: Vec<&TokenSample> = resp.tokens.iter().filter(|t| t.mask == 1).collect();
        if valid.is_empty() {
            continue;
        }
        let len = valid.len() as f64;
        let mut s = 0.0;
        let mut k = 0.0;
        let mut h = 0.0;
        for tok in valid {
            s += per_token_objective(tok.logp_theta, tok.logp_old, tok.logp_rollout, adv, cfg);
            if let Some(lref) = tok.logp_ref {
                k += kl_k3(tok.logp_theta, lref);
            }
            h += -tok.logp_theta;
        }
        surrogate += s / len / g;
        kl += k / len / g;
        entropy += h / len / g;
    }
    let ce_positive = ce_on_positives(group);
    let total = -surrogate + cfg.beta * kl - cfg.gamma * entropy + cfg.ce_weight * ce_positive;
    Ok(LossBreakdown { surrogate, kl, entropy, ce_positive, total })
}

/// Per-rank token losses and masks for balanced normalization.
#[derive(Debug, Clone)]
pub struct RankTokens {
    pub losses: Vec<f64>,
    pub masks: Vec<u8>,
}

/// Balanced data-parallel token normalization:
/// `L^(r) = (sum_i l_i^(r) m_i^(r)) / (eps + sum_{r'} sum_i m_i^(r')) * R`.
///
/// The mean over ranks then equals the global masked token mean, so each
/// token weighs equally regardless of which rank processed it.
pub fn balanced_dp_loss(per_rank: &[RankTokens], eps: f64) -> Result<Vec<f64>> {
    if per_rank.is_empty() {
        return Err(Error::invalid("at least one rank required"));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("eps must be > 0"));
    }
    for rank in per_rank {
        if rank.losses.len() != rank.masks.len() {
            return Err(Error::invalid("losses and masks length mismatch"));
        }
    }
    let r = per_rank.len() as f64;
    let global_tokens: f64 = per_rank
        .iter()
        .map(|rank| rank.masks.iter().map(|&m| m as f64).sum::<f64>())
        .sum();
    Ok(per_rank
        .iter()
        .map(|rank| {
            let masked_sum: f64 = rank
                .losses
                .iter()
                .zip(&rank.masks)
                .map(|(l, &m)| l * m as f64)
                .sum();
            masked_sum / (eps + global_tokens) * r
        })
        .collect())
}
