//! Temperature variants and best/worst-of-n selection.

use rand::Rng;

use super::Policy;
use crate::env::{Environment, PromptId, ResponseId};
use crate::error::{LabError, Result};
use crate::reward::RewardFn;

/// Same logits, temperature `t`.
pub fn temperature_variant(policy: &Policy, t: f64) -> Result<Policy> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(LabError::Argument(format!(
            "temperature must be positive, got {t}"
        )));
    }
    Policy::from_logits(policy.logits().to_vec(), t)
}

/// Draws `n` responses for prompt `x`, split evenly across `temps` in order
/// (the first `n/len` at `temps[0]`, and so on), scores each, and returns
/// `(best, worst)`. Ties go to the earliest draw.
pub fn best_worst_of_n<F: RewardFn + ?Sized, R: Rng + ?Sized>(
    policy: &Policy,
    scorer: &F,
    env: &Environment,
    x: PromptId,
    n: usize,
    temps: &[f64],
    rng: &mut R,
) -> Result<(ResponseId, ResponseId)> {
    if n < 2 {
        return Err(LabError::Argument(format!(
            "best/worst-of-n needs n >= 2, got {n}"
        )));
    }
    if temps.is_empty() || !n.is_multiple_of(temps.len()) {
        return Err(LabError::Argument(format!(
            "{} temperatures do not evenly partition n = {n}",
            temps.len()
        )));
    }
    env.check_prompt(x)?;
    policy.check_env(env)?;
    let per_temp = n / temps.len();
    let mut best: Option<(ResponseId, f64)> = None;
    let mut worst: Option<(ResponseId, f64)> = None;
    for &t in temps {
        let variant = temperature_variant(policy, t)?;
        let probs = variant.probs(x);
        for _ in 0..per_temp {
            let a = ResponseId(crate::env::sample_index(&probs, rng));
            let s = scorer.reward(env, x, a);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((a, s));
            }
            if worst.is_none_or(|(_, w)| s < w) {
                worst = Some((a, s));
            }
        }
    }
    Ok((best.expect("n >= 2").0, worst.expect("n >= 2").0))
}

/// Exact distribution of the best-of-`n` draw from `base`, ranked by `scores`.
///
/// For a tie class with score `s`, the maximum lands in the class with
/// probability `F(<=s)^n - F(<s)^n`; the first-drawn member of the class is
/// then distributed proportionally to `base` within the class.
pub fn best_of_n_distribution(base: &[f64], scores: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(base.len(), scores.len());
    assert!(n >= 1);
    let mut out = vec![0.0; base.len()];
    for (i, &si) in scores.iter().enumerate() {
        let below: f64 = base
            .iter()
            .zip(scores)
            .filter(|(_, s)| **s < si)
            .map(|(p, _)| p)
            .sum();
        let class: f64 = base
            .iter()
            .zip(scores)
            .filter(|(_, s)| **s == si)
            .map(|(p, _)| p)
            .sum();
        if class > 0.0 {
            let hit = (below + class).powi(n as i32) - below.powi(n as i32);
            out[i] = hit * base[i] / class;
        }
    }
    out
}

/// Exact distribution of the worst-of-`n` draw.
pub fn worst_of_n_distribution(base: &[f64], scores: &[f64], n: usize) -> Vec<f64> {
    let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
    best_of_n_distribution(base, &neg, n)
}

fn order_statistic_policy<F: RewardFn + ?Sized>(
    policy: &Policy,
    scorer: &F,
    env: &Environment,
    n: usize,
    best: bool,
) -> Result<Policy> {
    if n < 1 {
        return Err(LabError::Argument("n must be >= 1".into()));
    }
    policy.check_env(env)?;
    let probs: Vec<Vec<f64>> = env
        .prompt_ids()
        .map(|x| {
            let scores: Vec<f64> = env
                .response_ids(x)
                .map(|a| scorer.reward(env, x, a))
                .collect();
            let base = policy.probs(x);
            if best {
                best_of_n_distribution(&base, &scores, n)
            } else {
                worst_of_n_distribution(&base, &scores, n)
            }
        })
        .collect();
    Policy::from_probs(&probs)
}

/// The policy induced by returning the best of `n` draws from `policy`.
pub fn best_of_n_policy<F: RewardFn + ?Sized>(
    policy: &Policy,
    scorer: &F,
    env: &Environment,
    n: usize,
) -> Result<Policy> {
    order_statistic_policy(policy, scorer, env, n, true)
}

pub fn worst_of_n_policy<F: RewardFn + ?Sized>(
    policy: &Policy,
    scorer: &F,
    env: &Environment,
    n: usize,
) -> Result<Policy> {
    order_statistic_policy(policy, scorer, env, n, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PromptResponses;
    use crate::reward::TrueReward;
    use crate::seeds::rng_from_seed;

    fn env(rewards: Vec<f64>) -> Environment {
        Environment::new(
            vec![1.0],
            vec![PromptResponses {
                lengths: vec![1; rewards.len()],
                rewards,
                features: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn temperature_examples() {
        let p = Policy::from_logits(vec![vec![0.3, 1.2, -0.5]], 1.0).unwrap();
        assert_eq!(temperature_variant(&p, 1.0).unwrap(), p);
        let sharp = temperature_variant(&p, 0.01).unwrap();
        assert!(sharp.probs(PromptId(0))[1] >= 0.999);
        for t in [0.05, 0.7, 3.0, 50.0] {
            let v = temperature_variant(&p, t).unwrap();
            let probs = v.probs(PromptId(0));
            let am = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(am, 1);
        }
        assert!(matches!(
            temperature_variant(&p, 0.0),
            Err(LabError::Argument(_))
        ));
        assert!(temperature_variant(&p, -2.0).is_err());
    }

    #[test]
    fn identical_samples_give_best_equal_worst() {
        let e = env(vec![0.0, 1.0, 2.0]);
        let point = Policy::from_logits(vec![vec![0.0, -1e4, -1e4]], 1.0).unwrap();
        let mut rng = rng_from_seed(0);
        let (b, w) = best_worst_of_n(
            &point,
            &TrueReward,
            &e,
            PromptId(0),
            8,
            &[1.0, 0.7],
            &mut rng,
        )
        .unwrap();
        assert_eq!(b, w);
    }

    #[test]
    fn best_is_argmax_of_sampled() {
        let e = env(vec![0.4, 1.0, -2.0, 0.9]);
        let u = Policy::uniform(&e);
        let mut rng = rng_from_seed(17);
        for _ in 0..50 {
            let (b, w) =
                best_worst_of_n(&u, &TrueReward, &e, PromptId(0), 8, &[1.0, 0.7], &mut rng)
                    .unwrap();
            assert!(e.true_reward(PromptId(0), b) >= e.true_reward(PromptId(0), w));
        }
    }

    #[test]
    fn bad_n_and_partition() {
        let e = env(vec![0.0, 1.0]);
        let u = Policy::uniform(&e);
        let mut rng = rng_from_seed(0);
        assert!(matches!(
            best_worst_of_n(&u, &TrueReward, &e, PromptId(0), 1, &[1.0], &mut rng),
            Err(LabError::Argument(_))
        ));
        assert!(
            best_worst_of_n(&u, &TrueReward, &e, PromptId(0), 5, &[1.0, 0.7], &mut rng).is_err()
        );
    }

    #[test]
    fn order_statistic_distributions_are_normalized() {
        let base = [0.1, 0.2, 0.3, 0.4];
        let scores = [1.0, 1.0, 0.5, 2.0];
        for n in 1..6 {
            let b = best_of_n_distribution(&base, &scores, n);
            let w = worst_of_n_distribution(&base, &scores, n);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
        let one = best_of_n_distribution(&base, &scores, 1);
        for (a, b) in one.iter().zip(&base) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
