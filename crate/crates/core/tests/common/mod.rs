//! Independent reference computations shared by the integration tests.
//! Nothing here calls the library's own versions of these formulas.

#![allow(dead_code)]

use rlhf_lab::env::{Environment, PromptResponses};

/// Central finite differences of `f` at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b|_2 / max(|a|_2, |b|_2)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// `pi(a) = pi0(a) exp(r(a)/eta) / Z` by direct normalization.
pub fn gibbs(pi0: &[f64], r: &[f64], eta: f64) -> Vec<f64> {
    let top = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = pi0
        .iter()
        .zip(r)
        .map(|(p, x)| p * ((x - top) / eta).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// `sum_x d0(x) [E_pi r - eta KL(pi || pi0)]` from explicit tables.
pub fn objective(d0: &[f64], pi: &[Vec<f64>], pi0: &[Vec<f64>], r: &[Vec<f64>], eta: f64) -> f64 {
    (0..d0.len())
        .map(|x| {
            let reward: f64 = pi[x].iter().zip(&r[x]).map(|(p, v)| p * v).sum();
            d0[x] * (reward - eta * kl(&pi[x], &pi0[x]))
        })
        .sum()
}

/// Best-of-`n` law by enumerating every ordered `n`-tuple of draws; the
/// first draw attaining the maximum score is returned.
pub fn enumerate_best_of_n(base: &[f64], scores: &[f64], n: usize) -> Vec<f64> {
    let k = base.len();
    let mut out = vec![0.0; k];
    let mut tuple = vec![0usize; n];
    loop {
        let prob: f64 = tuple.iter().map(|&i| base[i]).product();
        let mut best = tuple[0];
        for &i in &tuple[1..] {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        out[best] += prob;
        let mut pos = 0;
        loop {
            if pos == n {
                return out;
            }
            tuple[pos] += 1;
            if tuple[pos] < k {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Tabular environment with the given reward table, unit lengths and uniform `d0`.
pub fn table_env(rewards: &[Vec<f64>]) -> Environment {
    let n = rewards.len();
    Environment::new(
        vec![1.0 / n as f64; n],
        rewards
            .iter()
            .map(|r| PromptResponses {
                rewards: r.clone(),
                lengths: vec![1; r.len()],
                features: None,
            })
            .collect(),
    )
    .unwrap()
}
