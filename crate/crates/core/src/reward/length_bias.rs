//! Audit of how strongly a reward tracks response length.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RewardFn;
use crate::env::{Environment, PromptId};
use crate::error::{LabError, Result};
use crate::numeric::pearson;
use crate::policy::Policy;

const HISTOGRAM_BINS: usize = 10;

/// One sampled prompt: mean length of its `n_resp` draws and the
/// reward/length Pearson coefficient (`None` when either is constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCorrelation {
    pub prompt: PromptId,
    pub mean_length: f64,
    pub pearson_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub samples: Vec<PromptCorrelation>,
    /// Mean over defined coefficients; `None` if all are missing.
    pub mean_coefficient: Option<f64>,
    pub n_missing: usize,
    /// Coefficients binned over `[-1, 1]`.
    pub histogram: Vec<HistogramBin>,
}

impl CorrelationReport {
    /// One row per distinct prompt: `prompt_id,mean_length,pearson_r,n_missing`.
    /// `mean_length` and `pearson_r` average over that prompt's samples;
    /// `pearson_r` is empty when every sample was missing.
    pub fn to_csv(&self) -> String {
        let mut groups: BTreeMap<PromptId, (f64, usize, f64, usize, usize)> = BTreeMap::new();
        for s in &self.samples {
            let g = groups.entry(s.prompt).or_default();
            g.0 += s.mean_length;
            g.1 += 1;
            match s.pearson_r {
                Some(r) => {
                    g.2 += r;
                    g.3 += 1;
                }
                None => g.4 += 1,
            }
        }
        let mut out = String::from("prompt_id,mean_length,pearson_r,n_missing\n");
        for (x, (len_sum, n, r_sum, r_n, missing)) in groups {
            let r = if r_n > 0 {
                (r_sum / r_n as f64).to_string()
            } else {
                String::new()
            };
            writeln!(out, "{x},{},{r},{missing}", len_sum / n as f64).unwrap();
        }
        out
    }
}

/// Samples `n_prompts` prompts from `d0` and `n_resp` responses per prompt
/// from `policy`, then correlates `model` scores with response lengths.
pub fn length_reward_correlation<F: RewardFn + ?Sized, R: Rng + ?Sized>(
    model: &F,
    env: &Environment,
    policy: &Policy,
    n_prompts: usize,
    n_resp: usize,
    rng: &mut R,
) -> Result<CorrelationReport> {
    if n_resp < 2 {
        return Err(LabError::Argument(format!(
            "need at least 2 responses per prompt, got {n_resp}"
        )));
    }
    policy.check_env(env)?;
    let mut samples = Vec::with_capacity(n_prompts);
    for _ in 0..n_prompts {
        let x = env.sample_prompt(rng);
        let draws: Vec<_> = (0..n_resp).map(|_| policy.sample(x, rng)).collect();
        let lengths: Vec<f64> = draws.iter().map(|a| env.length(x, *a) as f64).collect();
        let rewards: Vec<f64> = draws.iter().map(|a| model.reward(env, x, *a)).collect();
        samples.push(PromptCorrelation {
            prompt: x,
            mean_length: lengths.iter().sum::<f64>() / n_resp as f64,
            pearson_r: pearson(&rewards, &lengths),
        });
    }
    let defined: Vec<f64> = samples.iter().filter_map(|s| s.pearson_r).collect();
    let mean_coefficient =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let width = 2.0 / HISTOGRAM_BINS as f64;
    let mut histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            lo: -1.0 + i as f64 * width,
            hi: -1.0 + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for r in &defined {
        let i = (((r + 1.0) / width) as usize).min(HISTOGRAM_BINS - 1);
        histogram[i].count += 1;
    }
    Ok(CorrelationReport {
        n_missing: samples.len() - defined.len(),
        samples,
        mean_coefficient,
        histogram,
    })
}
