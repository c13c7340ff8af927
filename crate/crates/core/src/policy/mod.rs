//! Softmax policies over each prompt's responses, the closed-form
//! KL-regularized optimum, and exact evaluation of `J` and KL terms.

mod dpo;
mod sampling;

pub use dpo::{dpo_grad, dpo_loss, fit_dpo, fit_dpo_linear, DpoFit, LinearDpoFit};
pub use sampling::{
    best_of_n_distribution, best_of_n_policy, best_worst_of_n, temperature_variant,
    worst_of_n_distribution, worst_of_n_policy,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{sample_index, Environment, PromptId, ResponseId};
use crate::error::{LabError, Result};
use crate::numeric::{log_softmax, softmax};
use crate::reward::RewardFn;

/// Logit floor used when a policy is built from probabilities containing zeros.
const LOG_FLOOR: f64 = -700.0;

/// `pi(a|x) = softmax(logits[x] / temperature)[a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    logits: Vec<Vec<f64>>,
    temperature: f64,
}

impl Policy {
    pub fn from_logits(logits: Vec<Vec<f64>>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(LabError::Argument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if logits.is_empty() {
            return Err(LabError::Argument(
                "policy needs at least one prompt".into(),
            ));
        }
        for (x, row) in logits.iter().enumerate() {
            if row.is_empty() {
                return Err(LabError::Argument(format!("prompt {x} has no responses")));
            }
            if row.iter().any(|l| !l.is_finite()) {
                return Err(LabError::Argument(format!(
                    "prompt {x} has a non-finite logit"
                )));
            }
        }
        Ok(Self {
            logits,
            temperature,
        })
    }

    pub fn uniform(env: &Environment) -> Self {
        let logits = env
            .prompt_ids()
            .map(|x| vec![0.0; env.n_responses(x)])
            .collect();
        Self {
            logits,
            temperature: 1.0,
        }
    }

    /// Temperature-1 policy reproducing `probs`; zero entries get a floor logit.
    pub fn from_probs(probs: &[Vec<f64>]) -> Result<Self> {
        let logits = probs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| {
                        if *p > 0.0 {
                            p.ln().max(LOG_FLOOR)
                        } else {
                            LOG_FLOOR
                        }
                    })
                    .collect()
            })
            .collect();
        Self::from_logits(logits, 1.0)
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn n_prompts(&self) -> usize {
        self.logits.len()
    }

    pub fn n_responses(&self, x: PromptId) -> usize {
        self.logits[x.0].len()
    }

    fn scaled(&self, x: PromptId) -> Vec<f64> {
        self.logits[x.0]
            .iter()
            .map(|l| l / self.temperature)
            .collect()
    }

    pub fn probs(&self, x: PromptId) -> Vec<f64> {
        softmax(&self.scaled(x))
    }

    pub fn log_probs(&self, x: PromptId) -> Vec<f64> {
        log_softmax(&self.scaled(x))
    }

    pub fn all_probs(&self) -> Vec<Vec<f64>> {
        (0..self.logits.len())
            .map(|x| self.probs(PromptId(x)))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: PromptId, rng: &mut R) -> ResponseId {
        ResponseId(sample_index(&self.probs(x), rng))
    }

    /// Index of the largest logit; first one on ties.
    pub fn argmax(&self, x: PromptId) -> ResponseId {
        let row = &self.logits[x.0];
        let mut best = 0;
        for (i, l) in row.iter().enumerate() {
            if *l > row[best] {
                best = i;
            }
        }
        ResponseId(best)
    }

    pub fn flat_logits(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    /// Same shape and temperature, new logits.
    pub fn with_flat_logits(&self, flat: &[f64]) -> Self {
        let mut it = flat.iter().copied();
        let logits = self
            .logits
            .iter()
            .map(|row| {
                row.iter()
                    .map(|_| it.next().expect("flat logits too short"))
                    .collect()
            })
            .collect();
        Self {
            logits,
            temperature: self.temperature,
        }
    }

    pub fn same_shape(&self, other: &Policy) -> bool {
        self.logits.len() == other.logits.len()
            && self
                .logits
                .iter()
                .zip(&other.logits)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn check_env(&self, env: &Environment) -> Result<()> {
        if self.logits.len() != env.n_prompts()
            || env
                .prompt_ids()
                .any(|x| self.logits[x.0].len() != env.n_responses(x))
        {
            return Err(LabError::Argument(
                "policy shape does not match environment".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_prompt(&self, x: PromptId) -> Result<()> {
        if x.0 < self.logits.len() {
            Ok(())
        } else {
            Err(LabError::Lookup(format!("policy has no prompt {x}")))
        }
    }
}

/// Closed-form maximizer of the KL-regularized objective:
/// `pi(a|x) = pi_ref(a|x) exp(r(x,a)/eta) / Z(x)`, with `Z(x)` enumerated.
pub fn gibbs_policy<F: RewardFn + ?Sized>(
    reward: &F,
    env: &Environment,
    reference: &Policy,
    eta: f64,
) -> Result<Policy> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(LabError::Argument(format!(
            "eta must be positive, got {eta}"
        )));
    }
    reference.check_env(env)?;
    let logits = env
        .prompt_ids()
        .map(|x| {
            let logp = reference.log_probs(x);
            let row: Vec<f64> = env
                .response_ids(x)
                .map(|a| logp[a.0] + reward.reward(env, x, a) / eta)
                .collect();
            // Normalize in log space so the stored logits are log-probabilities.
            log_softmax(&row)
        })
        .collect();
    Policy::from_logits(logits, 1.0)
}

/// `KL(p(.|x) || q(.|x))`, clamped at zero against rounding.
pub fn kl_divergence(p: &Policy, q: &Policy, x: PromptId) -> Result<f64> {
    p.check_prompt(x)?;
    q.check_prompt(x)?;
    if p.n_responses(x) != q.n_responses(x) {
        return Err(LabError::Lookup(format!(
            "policies disagree on the responses of prompt {x}"
        )));
    }
    Ok(kl_from_log_probs(&p.log_probs(x), &q.log_probs(x)))
}

pub(crate) fn kl_from_log_probs(logp: &[f64], logq: &[f64]) -> f64 {
    let kl: f64 = logp
        .iter()
        .zip(logq)
        .map(|(lp, lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum();
    kl.max(0.0)
}

/// `E_{x~d0} KL(p(.|x) || q(.|x))`.
pub fn mean_kl(p: &Policy, q: &Policy, env: &Environment) -> Result<f64> {
    p.check_env(env)?;
    q.check_env(env)?;
    let mut total = 0.0;
    for x in env.prompt_ids() {
        total += env.prompt_dist()[x.0] * kl_divergence(p, q, x)?;
    }
    Ok(total)
}

/// Exact `E_{x~d0}[ E_{a~pi} r*(x,a) - eta KL(pi || pi_0) ]`.
pub fn policy_value_j(
    policy: &Policy,
    reference: &Policy,
    env: &Environment,
    eta: f64,
) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(LabError::Argument(format!("eta must be >= 0, got {eta}")));
    }
    policy.check_env(env)?;
    reference.check_env(env)?;
    let mut j = 0.0;
    for x in env.prompt_ids() {
        let probs = policy.probs(x);
        let reward: f64 = probs.iter().zip(env.rewards(x)).map(|(p, r)| p * r).sum();
        let kl = if eta > 0.0 {
            kl_divergence(policy, reference, x)?
        } else {
            0.0
        };
        j += env.prompt_dist()[x.0] * (reward - eta * kl);
    }
    Ok(j)
}

/// Exact expected response length under `policy`.
pub fn expected_length(policy: &Policy, env: &Environment) -> Result<f64> {
    policy.check_env(env)?;
    let mut total = 0.0;
    for x in env.prompt_ids() {
        let probs = policy.probs(x);
        let len: f64 = probs
            .iter()
            .zip(&env.prompt(x).lengths)
            .map(|(p, l)| p * *l as f64)
            .sum();
        total += env.prompt_dist()[x.0] * len;
    }
    Ok(total)
}
