//! Pairwise preference model: logistic regression on features of an
//! ordered pair, trained on position-randomized instances and queried with
//! both orders so that slot bias cancels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RewardFn;
use crate::env::{Environment, PreferenceRecord, PromptId, ResponseId};
use crate::error::{LabError, Result};
use crate::numeric::{dot, neg_log_sigmoid, sigmoid};
use crate::optim::{minimize, OptimOpts, OptimReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    A,
    B,
}

/// A record laid out as `[CONTEXT] x [RESPONSE A] .. [RESPONSE B] ..` with a slot label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInstance {
    pub prompt: PromptId,
    pub response_a: ResponseId,
    pub response_b: ResponseId,
    pub label: Slot,
    pub swapped: bool,
}

impl PairInstance {
    /// Undo the slot assignment.
    pub fn to_record(&self) -> PreferenceRecord {
        let (chosen, rejected) = match self.label {
            Slot::A => (self.response_a, self.response_b),
            Slot::B => (self.response_b, self.response_a),
        };
        PreferenceRecord::new(self.prompt, chosen, rejected)
    }
}

/// Places the chosen response in slot A or B with probability 1/2 each.
pub fn format_pair_instance<R: Rng + ?Sized>(rec: &PreferenceRecord, rng: &mut R) -> PairInstance {
    let swapped = rng.random::<bool>();
    if swapped {
        PairInstance {
            prompt: rec.prompt,
            response_a: rec.rejected,
            response_b: rec.chosen,
            label: Slot::B,
            swapped,
        }
    } else {
        PairInstance {
            prompt: rec.prompt,
            response_a: rec.chosen,
            response_b: rec.rejected,
            label: Slot::A,
            swapped,
        }
    }
}

/// Features `psi(x, first, second)` of an ordered pair. All variants are
/// antisymmetric: `psi(x, a, b) = -psi(x, b, a)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairFeatures {
    /// `phi(x, first) - phi(x, second)`.
    FeatureDifference,
    /// One-hot difference over all (prompt, response) cells.
    TabularDifference,
    /// Selected coordinates of the feature difference.
    Projected { dims: Vec<usize> },
}

impl PairFeatures {
    pub fn dim(&self, env: &Environment) -> Result<usize> {
        let d = match self {
            PairFeatures::FeatureDifference => env.feature_dim().ok_or_else(|| {
                LabError::Mode("feature-difference pairs need a linear environment".into())
            })?,
            PairFeatures::TabularDifference => env.total_responses(),
            PairFeatures::Projected { dims } => {
                let full = env.feature_dim().ok_or_else(|| {
                    LabError::Mode("projected pairs need a linear environment".into())
                })?;
                if let Some(bad) = dims.iter().find(|d| **d >= full) {
                    return Err(LabError::Config(format!(
                        "projected dimension {bad} out of range {full}"
                    )));
                }
                dims.len()
            }
        };
        Ok(d)
    }

    pub fn features(
        &self,
        env: &Environment,
        x: PromptId,
        first: ResponseId,
        second: ResponseId,
    ) -> Vec<f64> {
        match self {
            PairFeatures::FeatureDifference => {
                let (f, s) = (
                    env.features(x, first).unwrap(),
                    env.features(x, second).unwrap(),
                );
                f.iter().zip(s).map(|(a, b)| a - b).collect()
            }
            PairFeatures::TabularDifference => {
                let off = env.flat_offsets()[x.0];
                let mut v = vec![0.0; env.total_responses()];
                v[off + first.0] += 1.0;
                v[off + second.0] -= 1.0;
                v
            }
            PairFeatures::Projected { dims } => {
                let (f, s) = (
                    env.features(x, first).unwrap(),
                    env.features(x, second).unwrap(),
                );
                dims.iter().map(|&i| f[i] - s[i]).collect()
            }
        }
    }
}

/// `P(slot A wins) = sigmoid(<w, psi(x, A, B)> + position_bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwisePrefModel {
    pub features: PairFeatures,
    pub weights: Vec<f64>,
    /// Learned preference for slot A independent of content.
    pub position_bias: f64,
}

impl PairwisePrefModel {
    pub fn zeros(features: PairFeatures, env: &Environment) -> Result<Self> {
        let d = features.dim(env)?;
        Ok(Self {
            features,
            weights: vec![0.0; d],
            position_bias: 0.0,
        })
    }

    fn logit(&self, env: &Environment, x: PromptId, a: ResponseId, b: ResponseId) -> f64 {
        dot(&self.weights, &self.features.features(env, x, a, b)) + self.position_bias
    }

    /// `(p_A, p_B)` for one presentation order.
    fn slot_probs(
        &self,
        env: &Environment,
        x: PromptId,
        a: ResponseId,
        b: ResponseId,
    ) -> (f64, f64) {
        let z = self.logit(env, x, a, b);
        (sigmoid(z), sigmoid(-z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseFit {
    pub model: PairwisePrefModel,
    pub report: OptimReport,
}

/// Slot-label logistic NLL over precomputed `(psi, y)` rows with parameters
/// `weights ++ [bias]`, and its gradient.
fn slot_nll(rows: &[(Vec<f64>, f64)], p: &[f64]) -> (f64, Vec<f64>) {
    let d = p.len() - 1;
    let (w, bias) = (&p[..d], p[d]);
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (psi, y) in rows {
        let z = dot(w, psi) + bias;
        // -[y ln s(z) + (1-y) ln s(-z)]
        loss += y * neg_log_sigmoid(z) + (1.0 - y) * neg_log_sigmoid(-z);
        let r = sigmoid(z) - y;
        for (g, v) in grad[..d].iter_mut().zip(psi) {
            *g += r * v;
        }
        grad[d] += r;
    }
    let n = rows.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

fn slot_rows(
    data: &[PairInstance],
    env: &Environment,
    features: &PairFeatures,
) -> Result<Vec<(Vec<f64>, f64)>> {
    if data.is_empty() {
        return Err(LabError::Argument(
            "pairwise model needs a nonempty dataset".into(),
        ));
    }
    data.iter()
        .map(|i| {
            env.check_record(&i.to_record())?;
            let y = if i.label == Slot::A { 1.0 } else { 0.0 };
            Ok((
                features.features(env, i.prompt, i.response_a, i.response_b),
                y,
            ))
        })
        .collect()
}

/// Mean logistic NLL of predicting the label slot, without regularization.
pub fn pairwise_nll(
    model: &PairwisePrefModel,
    env: &Environment,
    data: &[PairInstance],
) -> Result<f64> {
    pairwise_nll_grad(model, env, data).map(|(loss, _)| loss)
}

/// Loss and gradient; the gradient lists the weights followed by the
/// position bias.
pub fn pairwise_nll_grad(
    model: &PairwisePrefModel,
    env: &Environment,
    data: &[PairInstance],
) -> Result<(f64, Vec<f64>)> {
    let d = model.features.dim(env)?;
    if d != model.weights.len() {
        return Err(LabError::Argument(format!(
            "model has {} weights but features have dimension {d}",
            model.weights.len()
        )));
    }
    let rows = slot_rows(data, env, &model.features)?;
    let mut p = model.weights.clone();
    p.push(model.position_bias);
    Ok(slot_nll(&rows, &p))
}

/// Minimizes the slot-label NLL plus `l2/2 (|w|^2 + bias^2)`.
pub fn fit_pairwise_pref_model(
    data: &[PairInstance],
    env: &Environment,
    features: PairFeatures,
    opts: &OptimOpts,
) -> Result<PairwiseFit> {
    let d = features.dim(env)?;
    if d == 0 {
        return Err(LabError::Config(
            "pairwise features have dimension 0".into(),
        ));
    }
    let rows = slot_rows(data, env, &features)?;
    let l2 = opts.l2_reg;
    let objective = |p: &[f64]| {
        let (loss, mut grad) = slot_nll(&rows, p);
        for (g, v) in grad.iter_mut().zip(p) {
            *g += l2 * v;
        }
        (loss + 0.5 * l2 * dot(p, p), grad)
    };
    let (p, report) = minimize(objective, vec![0.0; d + 1], opts)?;
    Ok(PairwiseFit {
        model: PairwisePrefModel {
            features,
            weights: p[..d].to_vec(),
            position_bias: p[d],
        },
        report,
    })
}

/// Symmetrized `P(a1 > a2 | x)`: the `p_A / (p_A + p_B)` score with `a1` in
/// slot A, averaged with the complementary score with `a1` in slot B.
pub fn pairwise_pref_predict(
    model: &PairwisePrefModel,
    env: &Environment,
    x: PromptId,
    a1: ResponseId,
    a2: ResponseId,
) -> Result<f64> {
    let d = model.features.dim(env)?;
    if d != model.weights.len() {
        return Err(LabError::Argument(format!(
            "model has {} weights but features have dimension {d}",
            model.weights.len()
        )));
    }
    env.check_response(x, a1)?;
    env.check_response(x, a2)?;
    Ok(predict_unchecked(model, env, x, a1, a2))
}

fn predict_unchecked(
    model: &PairwisePrefModel,
    env: &Environment,
    x: PromptId,
    a1: ResponseId,
    a2: ResponseId,
) -> f64 {
    let (pa, pb) = model.slot_probs(env, x, a1, a2);
    let first_order = pa / (pa + pb);
    let (pa, pb) = model.slot_probs(env, x, a2, a1);
    let second_order = pb / (pa + pb);
    0.5 * (first_order + second_order)
}

/// Scores a response by its mean predicted win probability against every
/// other response of the same prompt.
#[derive(Debug, Clone)]
pub struct PairwiseTournament {
    model: PairwisePrefModel,
}

impl PairwiseTournament {
    pub fn new(model: PairwisePrefModel, env: &Environment) -> Result<Self> {
        if model.features.dim(env)? != model.weights.len() {
            return Err(LabError::Argument(
                "pairwise model does not match environment".into(),
            ));
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &PairwisePrefModel {
        &self.model
    }
}

impl RewardFn for PairwiseTournament {
    fn reward(&self, env: &Environment, x: PromptId, a: ResponseId) -> f64 {
        let others = env.n_responses(x) - 1;
        env.response_ids(x)
            .filter(|b| *b != a)
            .map(|b| predict_unchecked(&self.model, env, x, a, b))
            .sum::<f64>()
            / others as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_synthetic_env, EnvSpec, RewardGen};
    use crate::seeds::rng_from_seed;

    fn linear_env() -> Environment {
        let spec = EnvSpec {
            prompts: 3,
            responses: 4,
            reward: RewardGen::Linear { dim: 3, bound: 1.0 },
            ..EnvSpec::default()
        };
        make_synthetic_env(&spec, 2).unwrap()
    }

    #[test]
    fn formatting_round_trips_and_is_seeded() {
        let rec = PreferenceRecord::new(PromptId(1), ResponseId(3), ResponseId(0));
        let mut rng = rng_from_seed(4);
        let a: Vec<_> = (0..32)
            .map(|_| format_pair_instance(&rec, &mut rng))
            .collect();
        let mut rng = rng_from_seed(4);
        let b: Vec<_> = (0..32)
            .map(|_| format_pair_instance(&rec, &mut rng))
            .collect();
        assert_eq!(a, b);
        for inst in &a {
            assert_eq!(inst.to_record(), rec);
            assert_eq!(inst.swapped, inst.label == Slot::B);
        }
    }

    #[test]
    fn swap_frequency() {
        let rec = PreferenceRecord::new(PromptId(0), ResponseId(1), ResponseId(0));
        let mut rng = rng_from_seed(8);
        let swaps = (0..10_000)
            .filter(|_| format_pair_instance(&rec, &mut rng).swapped)
            .count();
        assert!((swaps as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn zero_model_predicts_half() {
        let env = linear_env();
        let m = PairwisePrefModel::zeros(PairFeatures::FeatureDifference, &env).unwrap();
        assert_eq!(
            pairwise_pref_predict(&m, &env, PromptId(0), ResponseId(0), ResponseId(1)).unwrap(),
            0.5
        );
    }

    #[test]
    fn position_bias_cancels_under_symmetrization() {
        let env = linear_env();
        let m = PairwisePrefModel {
            features: PairFeatures::FeatureDifference,
            weights: vec![0.0; 3],
            position_bias: 3.0,
        };
        let p = pairwise_pref_predict(&m, &env, PromptId(2), ResponseId(0), ResponseId(3)).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_dimensional_features_are_a_config_error() {
        let env = linear_env();
        let inst = format_pair_instance(
            &PreferenceRecord::new(PromptId(0), ResponseId(0), ResponseId(1)),
            &mut rng_from_seed(0),
        );
        let err = fit_pairwise_pref_model(
            &[inst],
            &env,
            PairFeatures::Projected { dims: vec![] },
            &OptimOpts::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let env = linear_env();
        let m = PairwisePrefModel {
            features: PairFeatures::FeatureDifference,
            weights: vec![0.0; 5],
            position_bias: 0.0,
        };
        assert!(matches!(
            pairwise_pref_predict(&m, &env, PromptId(0), ResponseId(0), ResponseId(1)),
            Err(LabError::Argument(_))
        ));
    }
}
