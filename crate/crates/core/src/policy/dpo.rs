//! DPO loss, its exact gradient through the softmax, and the descent loop.
//!
//! With `z = eta [ln pi(w|x) - ln pi_ref(w|x)] - eta [ln pi(l|x) - ln pi_ref(l|x)]`
//! the per-record loss is `-ln sigmoid(z)`. Under the logits parameterization
//! the softmax normalizer cancels in `z`, so `dz/dlogit_b = eta/T (1[b=w] - 1[b=l])`
//! and the loss is convex in the logits.

use serde::{Deserialize, Serialize};

use super::Policy;
use crate::env::{Environment, PreferenceRecord};
use crate::error::{LabError, Result};
use crate::numeric::{dot, neg_log_sigmoid, sigmoid};
use crate::optim::{minimize, OptimOpts, OptimReport};

fn check_inputs(
    policy: &Policy,
    reference: &Policy,
    data: &[PreferenceRecord],
    eta: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(LabError::Argument("DPO needs a nonempty dataset".into()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(LabError::Argument(format!(
            "eta must be positive, got {eta}"
        )));
    }
    if !policy.same_shape(reference) {
        return Err(LabError::Argument(
            "policy and reference shapes differ".into(),
        ));
    }
    let mut total_weight = 0.0;
    for rec in data {
        policy.check_prompt(rec.prompt)?;
        let k = policy.n_responses(rec.prompt);
        if rec.chosen.0 >= k || rec.rejected.0 >= k {
            return Err(LabError::Lookup(format!(
                "record references a response outside prompt {}",
                rec.prompt
            )));
        }
        if rec.chosen == rec.rejected {
            return Err(LabError::Argument("record has chosen == rejected".into()));
        }
        total_weight += rec.weight;
    }
    if !(total_weight > 0.0) {
        return Err(LabError::Argument("dataset has zero total weight".into()));
    }
    Ok(total_weight)
}

/// Implicit-reward margins `z` of every record.
fn margins(policy: &Policy, reference: &Policy, data: &[PreferenceRecord], eta: f64) -> Vec<f64> {
    let mut cache: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; policy.n_prompts()];
    data.iter()
        .map(|rec| {
            let (lp, lr) = cache[rec.prompt.0].get_or_insert_with(|| {
                (
                    policy.log_probs(rec.prompt),
                    reference.log_probs(rec.prompt),
                )
            });
            let (w, l) = (rec.chosen.0, rec.rejected.0);
            eta * ((lp[w] - lr[w]) - (lp[l] - lr[l]))
        })
        .collect()
}

/// Weighted mean of `-ln sigmoid(z)` over records.
pub fn dpo_loss(
    policy: &Policy,
    reference: &Policy,
    data: &[PreferenceRecord],
    eta: f64,
) -> Result<f64> {
    let total_weight = check_inputs(policy, reference, data, eta)?;
    let z = margins(policy, reference, data, eta);
    Ok(data
        .iter()
        .zip(&z)
        .map(|(r, z)| r.weight * neg_log_sigmoid(*z))
        .sum::<f64>()
        / total_weight)
}

/// Gradient of [`dpo_loss`] with respect to the policy logits.
pub fn dpo_grad(
    policy: &Policy,
    reference: &Policy,
    data: &[PreferenceRecord],
    eta: f64,
) -> Result<Vec<Vec<f64>>> {
    let total_weight = check_inputs(policy, reference, data, eta)?;
    Ok(grad_unchecked(policy, reference, data, eta, total_weight))
}

fn grad_unchecked(
    policy: &Policy,
    reference: &Policy,
    data: &[PreferenceRecord],
    eta: f64,
    total_weight: f64,
) -> Vec<Vec<f64>> {
    let z = margins(policy, reference, data, eta);
    let scale = eta / policy.temperature();
    let mut grad: Vec<Vec<f64>> = policy
        .logits()
        .iter()
        .map(|row| vec![0.0; row.len()])
        .collect();
    for (rec, z) in data.iter().zip(z) {
        let g = -rec.weight * sigmoid(-z) * scale / total_weight;
        grad[rec.prompt.0][rec.chosen.0] += g;
        grad[rec.prompt.0][rec.rejected.0] -= g;
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoFit {
    pub policy: Policy,
    pub report: OptimReport,
}

/// Descends the DPO loss from `init` with `reference` held fixed.
///
/// `opts.l2_reg` adds `l2/2 * |logits - anchor|^2`, where the anchor is the
/// reference's logits rescaled to `init`'s temperature. This pulls the policy
/// toward the reference; it is what keeps the optimum finite when the data
/// never contradicts a comparison.
pub fn fit_dpo(
    data: &[PreferenceRecord],
    reference: &Policy,
    init: &Policy,
    eta: f64,
    opts: &OptimOpts,
) -> Result<DpoFit> {
    let total_weight = check_inputs(init, reference, data, eta)?;
    let scale = init.temperature() / reference.temperature();
    let anchor: Vec<f64> = reference.flat_logits().iter().map(|l| scale * l).collect();
    let l2 = opts.l2_reg;
    let objective = |flat: &[f64]| {
        let p = init.with_flat_logits(flat);
        let z = margins(&p, reference, data, eta);
        let mut loss = data
            .iter()
            .zip(&z)
            .map(|(r, z)| r.weight * neg_log_sigmoid(*z))
            .sum::<f64>()
            / total_weight;
        let mut grad: Vec<f64> = grad_unchecked(&p, reference, data, eta, total_weight)
            .into_iter()
            .flatten()
            .collect();
        if l2 > 0.0 {
            for ((g, v), a) in grad.iter_mut().zip(flat).zip(&anchor) {
                loss += 0.5 * l2 * (v - a) * (v - a);
                *g += l2 * (v - a);
            }
        }
        (loss, grad)
    };
    let (flat, report) = minimize(objective, init.flat_logits(), opts)?;
    Ok(DpoFit {
        policy: init.with_flat_logits(&flat),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDpoFit {
    pub theta: Vec<f64>,
    pub policy: Policy,
    pub report: OptimReport,
}

fn log_linear_policy(
    env: &Environment,
    reference: &Policy,
    theta: &[f64],
    eta: f64,
) -> Result<Policy> {
    let reward = |env: &Environment, x, a| dot(theta, env.features(x, a).expect("linear env"));
    super::gibbs_policy(&reward, env, reference, eta)
}

/// DPO over the log-linear class `pi_theta ∝ pi_ref exp(<theta, phi>/eta)`.
///
/// The margin of a record reduces to `<theta, phi(x,w) - phi(x,l)>`, so the
/// optimum coincides with the linear BT maximum-likelihood reward followed by
/// the Gibbs solution. `opts.l2_reg` penalizes `|theta|^2 / 2`.
pub fn fit_dpo_linear(
    data: &[PreferenceRecord],
    env: &Environment,
    reference: &Policy,
    eta: f64,
    opts: &OptimOpts,
) -> Result<LinearDpoFit> {
    let d = env
        .feature_dim()
        .ok_or_else(|| LabError::Mode("log-linear DPO needs a linear environment".into()))?;
    let total_weight = check_inputs(reference, reference, data, eta)?;
    for rec in data {
        env.check_record(rec)?;
    }
    let diffs: Vec<Vec<f64>> = data
        .iter()
        .map(|r| {
            let (w, l) = (
                env.features(r.prompt, r.chosen).unwrap(),
                env.features(r.prompt, r.rejected).unwrap(),
            );
            w.iter().zip(l).map(|(a, b)| a - b).collect()
        })
        .collect();
    let l2 = opts.l2_reg;
    let objective = |theta: &[f64]| {
        let policy = match log_linear_policy(env, reference, theta, eta) {
            Ok(p) => p,
            Err(_) => return (f64::NAN, vec![f64::NAN; d]),
        };
        let z = margins(&policy, reference, data, eta);
        let mut loss = 0.0;
        let mut grad = vec![0.0; d];
        for ((rec, z), diff) in data.iter().zip(&z).zip(&diffs) {
            loss += rec.weight * neg_log_sigmoid(*z);
            let g = -rec.weight * sigmoid(-z);
            for (gi, di) in grad.iter_mut().zip(diff) {
                *gi += g * di;
            }
        }
        loss /= total_weight;
        for (gi, ti) in grad.iter_mut().zip(theta) {
            *gi = *gi / total_weight + l2 * ti;
        }
        loss += 0.5 * l2 * dot(theta, theta);
        (loss, grad)
    };
    let (theta, report) = minimize(objective, vec![0.0; d], opts)?;
    let policy = log_linear_policy(env, reference, &theta, eta)?;
    Ok(LinearDpoFit {
        theta,
        policy,
        report,
    })
}
