//! Learned preference signals: the BT reward fitted by maximum likelihood,
//! the pairwise preference model, and the length-bias audit.

mod length_bias;
mod pairwise;

pub use length_bias::{
    length_reward_correlation, CorrelationReport, HistogramBin, PromptCorrelation,
};
pub use pairwise::{
    fit_pairwise_pref_model, format_pair_instance, pairwise_nll, pairwise_nll_grad,
    pairwise_pref_predict, PairFeatures, PairInstance, PairwiseFit, PairwisePrefModel,
    PairwiseTournament, Slot,
};

use serde::{Deserialize, Serialize};

use crate::env::{Environment, PreferenceRecord, PromptId, ResponseId};
use crate::error::{LabError, Result};
use crate::numeric::{dot, neg_log_sigmoid, sigmoid};
use crate::optim::{minimize, OptimOpts, OptimReport};

/// Anything that assigns a scalar score to a (prompt, response) cell.
///
/// Implementors may assume the ids are valid for `env`; callers validate.
pub trait RewardFn {
    fn reward(&self, env: &Environment, x: PromptId, a: ResponseId) -> f64;
}

impl<F> RewardFn for F
where
    F: Fn(&Environment, PromptId, ResponseId) -> f64,
{
    fn reward(&self, env: &Environment, x: PromptId, a: ResponseId) -> f64 {
        self(env, x, a)
    }
}

/// The environment's ground-truth reward `r*`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrueReward;

impl RewardFn for TrueReward {
    fn reward(&self, env: &Environment, x: PromptId, a: ResponseId) -> f64 {
        env.true_reward(x, a)
    }
}

/// `inner + bias * |a|`: a scorer that over-rewards long responses.
#[derive(Debug, Clone)]
pub struct LengthBiased<S> {
    pub inner: S,
    pub bias: f64,
}

impl<S: RewardFn> RewardFn for LengthBiased<S> {
    fn reward(&self, env: &Environment, x: PromptId, a: ResponseId) -> f64 {
        self.inner.reward(env, x, a) + self.bias * env.length(x, a) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Tabular,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardModel {
    Tabular { scores: Vec<Vec<f64>> },
    Linear { theta: Vec<f64> },
}

impl RewardFn for RewardModel {
    fn reward(&self, env: &Environment, x: PromptId, a: ResponseId) -> f64 {
        match self {
            RewardModel::Tabular { scores } => scores[x.0][a.0],
            RewardModel::Linear { theta } => dot(
                theta,
                env.features(x, a).expect("linear reward on linear env"),
            ),
        }
    }
}

impl RewardModel {
    pub fn zeros(mode: RewardMode, env: &Environment) -> Result<Self> {
        match mode {
            RewardMode::Tabular => Ok(RewardModel::Tabular {
                scores: env
                    .prompt_ids()
                    .map(|x| vec![0.0; env.n_responses(x)])
                    .collect(),
            }),
            RewardMode::Linear => {
                let d = env.feature_dim().ok_or_else(|| {
                    LabError::Mode("linear reward needs environment features".into())
                })?;
                Ok(RewardModel::Linear {
                    theta: vec![0.0; d],
                })
            }
        }
    }

    pub fn mode(&self) -> RewardMode {
        match self {
            RewardModel::Tabular { .. } => RewardMode::Tabular,
            RewardModel::Linear { .. } => RewardMode::Linear,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            RewardModel::Tabular { scores } => scores.iter().flatten().copied().collect(),
            RewardModel::Linear { theta } => theta.clone(),
        }
    }

    pub fn with_params(&self, flat: &[f64]) -> Self {
        match self {
            RewardModel::Tabular { scores } => {
                let mut it = flat.iter().copied();
                RewardModel::Tabular {
                    scores: scores
                        .iter()
                        .map(|row| {
                            row.iter()
                                .map(|_| it.next().expect("params too short"))
                                .collect()
                        })
                        .collect(),
                }
            }
            RewardModel::Linear { .. } => RewardModel::Linear {
                theta: flat.to_vec(),
            },
        }
    }

    pub fn check_env(&self, env: &Environment) -> Result<()> {
        let ok = match self {
            RewardModel::Tabular { scores } => {
                scores.len() == env.n_prompts()
                    && env
                        .prompt_ids()
                        .all(|x| scores[x.0].len() == env.n_responses(x))
            }
            RewardModel::Linear { theta } => match env.feature_dim() {
                Some(d) => d == theta.len(),
                None => {
                    return Err(LabError::Mode(
                        "linear reward needs environment features".into(),
                    ))
                }
            },
        };
        if !ok {
            return Err(LabError::Argument(
                "reward model shape does not match environment".into(),
            ));
        }
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err(LabError::Argument(
                "reward model has non-finite parameters".into(),
            ));
        }
        Ok(())
    }
}

fn check_data(model: &RewardModel, env: &Environment, data: &[PreferenceRecord]) -> Result<f64> {
    if data.is_empty() {
        return Err(LabError::Argument(
            "reward fitting needs a nonempty dataset".into(),
        ));
    }
    model.check_env(env)?;
    let mut total = 0.0;
    for rec in data {
        env.check_record(rec)?;
        total += rec.weight;
    }
    if !(total > 0.0) {
        return Err(LabError::Argument("dataset has zero total weight".into()));
    }
    Ok(total)
}

/// Weighted mean of `-ln sigmoid(r(x, a^w) - r(x, a^l))`.
pub fn bt_nll(model: &RewardModel, env: &Environment, data: &[PreferenceRecord]) -> Result<f64> {
    let total = check_data(model, env, data)?;
    Ok(nll_unchecked(model, env, data, total))
}

fn nll_unchecked(
    model: &RewardModel,
    env: &Environment,
    data: &[PreferenceRecord],
    total: f64,
) -> f64 {
    data.iter()
        .map(|r| {
            let diff =
                model.reward(env, r.prompt, r.chosen) - model.reward(env, r.prompt, r.rejected);
            r.weight * neg_log_sigmoid(diff)
        })
        .sum::<f64>()
        / total
}

/// Gradient of [`bt_nll`] in the model's flat parameter layout.
pub fn bt_nll_grad(
    model: &RewardModel,
    env: &Environment,
    data: &[PreferenceRecord],
) -> Result<Vec<f64>> {
    let total = check_data(model, env, data)?;
    Ok(grad_unchecked(model, env, data, total))
}

fn grad_unchecked(
    model: &RewardModel,
    env: &Environment,
    data: &[PreferenceRecord],
    total: f64,
) -> Vec<f64> {
    match model {
        RewardModel::Tabular { scores } => {
            let offsets = env.flat_offsets();
            let mut grad = vec![0.0; scores.iter().map(Vec::len).sum()];
            for r in data {
                let x = r.prompt.0;
                let diff = scores[x][r.chosen.0] - scores[x][r.rejected.0];
                let g = -r.weight * sigmoid(-diff) / total;
                grad[offsets[x] + r.chosen.0] += g;
                grad[offsets[x] + r.rejected.0] -= g;
            }
            grad
        }
        RewardModel::Linear { theta } => {
            let mut grad = vec![0.0; theta.len()];
            for r in data {
                let fw = env.features(r.prompt, r.chosen).expect("linear env");
                let fl = env.features(r.prompt, r.rejected).expect("linear env");
                let diff = dot(theta, fw) - dot(theta, fl);
                let g = -r.weight * sigmoid(-diff) / total;
                for ((gi, w), l) in grad.iter_mut().zip(fw).zip(fl) {
                    *gi += g * (w - l);
                }
            }
            grad
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtFit {
    pub model: RewardModel,
    pub report: OptimReport,
    pub l2_reg: f64,
}

/// BT maximum-likelihood reward, starting from the all-zero model.
pub fn fit_bt_reward(
    data: &[PreferenceRecord],
    env: &Environment,
    mode: RewardMode,
    opts: &OptimOpts,
) -> Result<BtFit> {
    fit_bt_reward_from(data, env, RewardModel::zeros(mode, env)?, opts)
}

/// Minimizes `bt_nll + l2/2 |params|^2` from `init`.
pub fn fit_bt_reward_from(
    data: &[PreferenceRecord],
    env: &Environment,
    init: RewardModel,
    opts: &OptimOpts,
) -> Result<BtFit> {
    let total = check_data(&init, env, data)?;
    let l2 = opts.l2_reg;
    let objective = |p: &[f64]| {
        let m = init.with_params(p);
        let mut loss = nll_unchecked(&m, env, data, total);
        let mut grad = grad_unchecked(&m, env, data, total);
        if l2 > 0.0 {
            loss += 0.5 * l2 * dot(p, p);
            for (g, v) in grad.iter_mut().zip(p) {
                *g += l2 * v;
            }
        }
        (loss, grad)
    };
    let (params, report) = minimize(objective, init.params(), opts)?;
    Ok(BtFit {
        model: init.with_params(&params),
        report,
        l2_reg: l2,
    })
}

/// `sigmoid(r(x, a1) - r(x, a2))` under a learned model.
pub fn reward_pref_prob(
    model: &RewardModel,
    env: &Environment,
    x: PromptId,
    a1: ResponseId,
    a2: ResponseId,
) -> Result<f64> {
    model.check_env(env)?;
    env.check_response(x, a1)?;
    env.check_response(x, a2)?;
    Ok(sigmoid(model.reward(env, x, a1) - model.reward(env, x, a2)))
}
