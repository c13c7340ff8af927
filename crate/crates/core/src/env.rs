//! Synthetic alignment environments and the ground-truth BT preference oracle.
//!
//! An [`Environment`] is a finite prompt set with a prompt distribution, a
//! finite response set per prompt, an exact reward table, a synthetic
//! response length per response, and (in linear mode) a feature vector per
//! response whose inner product with the generating parameter reproduces
//! the reward table.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LabError, Result};
use crate::numeric::{dot, norm, sigmoid};
use crate::policy::Policy;
use crate::seeds::rng_from_seed;

pub const ENV_VERSION: &str = "rlhf-lab.env.v1";

/// Retries allowed when a sampled pair has identical responses.
pub const DEFAULT_PAIR_RETRIES: usize = 16;

const DIST_TOL: f64 = 1e-12;
const LINEAR_AGREEMENT_TOL: f64 = 1e-12;

macro_rules! string_id {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub usize);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl std::str::FromStr for $name {
            type Err = LabError;
            fn from_str(s: &str) -> Result<Self> {
                s.trim()
                    .parse::<usize>()
                    .map($name)
                    .map_err(|_| LabError::Lookup(format!("malformed {} id `{s}`", $what)))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Raw {
                    Str(String),
                    Num(usize),
                }
                match Raw::deserialize(d)? {
                    Raw::Num(n) => Ok($name(n)),
                    Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
                }
            }
        }
    };
}

string_id!(PromptId, "prompt");
string_id!(ResponseId, "response");

/// Outcome of one oracle query on an ordered pair `(a1, a2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreferenceLabel {
    First,
    Second,
}

impl PreferenceLabel {
    /// Binary encoding: 1 means the first response is preferred.
    pub fn y(self) -> u8 {
        match self {
            PreferenceLabel::First => 1,
            PreferenceLabel::Second => 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn default_weight() -> f64 {
    1.0
}

fn is_unit(w: &f64) -> bool {
    *w == 1.0
}

/// A labeled comparison `(x, a^w, a^l)`.
///
/// `weight` defaults to 1 and is only written when it differs; fractional
/// weights let a dataset carry exact preference frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    #[serde(rename = "prompt_id")]
    pub prompt: PromptId,
    #[serde(rename = "chosen_id")]
    pub chosen: ResponseId,
    #[serde(rename = "rejected_id")]
    pub rejected: ResponseId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default = "default_weight", skip_serializing_if = "is_unit")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RecordMeta>,
}

impl PreferenceRecord {
    pub fn new(prompt: PromptId, chosen: ResponseId, rejected: ResponseId) -> Self {
        Self {
            prompt,
            chosen,
            rejected,
            margin: None,
            weight: 1.0,
            meta: None,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_meta(mut self, meta: RecordMeta) -> Self {
        self.meta = Some(meta);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptResponses {
    pub rewards: Vec<f64>,
    pub lengths: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvDocument {
    version: String,
    prompt_dist: Vec<f64>,
    prompts: Vec<PromptResponses>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    theta_bound: Option<f64>,
}

/// Immutable once built; every constructor path validates.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    prompt_dist: Vec<f64>,
    prompts: Vec<PromptResponses>,
    theta: Option<Vec<f64>>,
    theta_bound: Option<f64>,
}

impl Environment {
    /// Tabular environment.
    pub fn new(prompt_dist: Vec<f64>, prompts: Vec<PromptResponses>) -> Result<Self> {
        let env = Self {
            prompt_dist,
            prompts,
            theta: None,
            theta_bound: None,
        };
        env.validate()?;
        Ok(env)
    }

    /// Linear environment: rewards are recomputed as `<theta, phi>`.
    pub fn new_linear(
        prompt_dist: Vec<f64>,
        mut prompts: Vec<PromptResponses>,
        theta: Vec<f64>,
        bound: f64,
    ) -> Result<Self> {
        for p in &mut prompts {
            let feats = p
                .features
                .as_ref()
                .ok_or_else(|| LabError::Config("linear environment needs features".into()))?;
            p.rewards = feats.iter().map(|f| dot(&theta, f)).collect();
        }
        let env = Self {
            prompt_dist,
            prompts,
            theta: Some(theta),
            theta_bound: Some(bound),
        };
        env.validate()?;
        Ok(env)
    }

    fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(LabError::Config(
                "environment needs at least one prompt".into(),
            ));
        }
        if self.prompt_dist.len() != self.prompts.len() {
            return Err(LabError::Config(format!(
                "prompt_dist has {} entries for {} prompts",
                self.prompt_dist.len(),
                self.prompts.len()
            )));
        }
        if self
            .prompt_dist
            .iter()
            .any(|p| !(*p >= 0.0) || !p.is_finite())
        {
            return Err(LabError::Config(
                "prompt_dist entries must be finite and >= 0".into(),
            ));
        }
        let total: f64 = self.prompt_dist.iter().sum();
        if (total - 1.0).abs() > DIST_TOL {
            return Err(LabError::Config(format!(
                "prompt_dist sums to {total}, not 1"
            )));
        }
        let dim = self.feature_dim();
        for (x, p) in self.prompts.iter().enumerate() {
            let k = p.rewards.len();
            if k < 2 {
                return Err(LabError::Config(format!(
                    "prompt {x} has {k} responses; need >= 2"
                )));
            }
            if p.lengths.len() != k {
                return Err(LabError::Config(format!(
                    "prompt {x}: lengths do not match responses"
                )));
            }
            if p.rewards.iter().any(|r| !r.is_finite()) {
                return Err(LabError::Config(format!("prompt {x}: non-finite reward")));
            }
            match (&p.features, dim) {
                (None, None) => {}
                (Some(f), Some(d)) => {
                    if f.len() != k || f.iter().any(|v| v.len() != d) {
                        return Err(LabError::Config(format!(
                            "prompt {x}: features must be {k} vectors of dimension {d}"
                        )));
                    }
                    if f.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(LabError::Config(format!("prompt {x}: non-finite feature")));
                    }
                }
                _ => {
                    return Err(LabError::Config(
                        "features must be present on every prompt or none".into(),
                    ))
                }
            }
        }
        if let Some(d) = dim {
            if d == 0 {
                return Err(LabError::Config("feature dimension must be >= 1".into()));
            }
        }
        match (&self.theta, dim) {
            (Some(theta), Some(d)) => {
                if theta.len() != d {
                    return Err(LabError::Config(
                        "theta dimension does not match features".into(),
                    ));
                }
                let bound = self.theta_bound.unwrap_or(f64::INFINITY);
                if norm(theta) > bound * (1.0 + 1e-12) {
                    return Err(LabError::Config(format!(
                        "|theta| = {} exceeds bound {bound}",
                        norm(theta)
                    )));
                }
                for p in &self.prompts {
                    let feats = p.features.as_ref().expect("checked above");
                    for (r, f) in p.rewards.iter().zip(feats) {
                        if (r - dot(theta, f)).abs() > LINEAR_AGREEMENT_TOL {
                            return Err(LabError::Config(
                                "reward table disagrees with <theta, phi>".into(),
                            ));
                        }
                    }
                }
            }
            (Some(_), None) => {
                return Err(LabError::Config("theta given without features".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn n_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn n_responses(&self, x: PromptId) -> usize {
        self.prompts[x.0].rewards.len()
    }

    pub fn prompt_ids(&self) -> impl Iterator<Item = PromptId> + '_ {
        (0..self.prompts.len()).map(PromptId)
    }

    pub fn response_ids(&self, x: PromptId) -> impl Iterator<Item = ResponseId> {
        (0..self.prompts[x.0].rewards.len()).map(ResponseId)
    }

    pub fn prompt_dist(&self) -> &[f64] {
        &self.prompt_dist
    }

    pub fn prompt(&self, x: PromptId) -> &PromptResponses {
        &self.prompts[x.0]
    }

    /// Total number of (prompt, response) cells.
    pub fn total_responses(&self) -> usize {
        self.prompts.iter().map(|p| p.rewards.len()).sum()
    }

    /// Offset of prompt `x`'s first response in a flat (prompt, response) layout.
    pub fn flat_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.prompts
            .iter()
            .map(|p| {
                let o = acc;
                acc += p.rewards.len();
                o
            })
            .collect()
    }

    pub fn true_reward(&self, x: PromptId, a: ResponseId) -> f64 {
        self.prompts[x.0].rewards[a.0]
    }

    pub fn rewards(&self, x: PromptId) -> &[f64] {
        &self.prompts[x.0].rewards
    }

    pub fn length(&self, x: PromptId, a: ResponseId) -> u32 {
        self.prompts[x.0].lengths[a.0]
    }

    pub fn is_linear(&self) -> bool {
        self.prompts[0].features.is_some()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.prompts
            .first()
            .and_then(|p| p.features.as_ref())
            .and_then(|f| f.first())
            .map(Vec::len)
    }

    pub fn features(&self, x: PromptId, a: ResponseId) -> Option<&[f64]> {
        self.prompts[x.0]
            .features
            .as_ref()
            .map(|f| f[a.0].as_slice())
    }

    pub fn theta(&self) -> Option<&[f64]> {
        self.theta.as_deref()
    }

    pub fn check_prompt(&self, x: PromptId) -> Result<()> {
        if x.0 < self.prompts.len() {
            Ok(())
        } else {
            Err(LabError::Lookup(format!("unknown prompt {x}")))
        }
    }

    pub fn check_response(&self, x: PromptId, a: ResponseId) -> Result<()> {
        self.check_prompt(x)?;
        if a.0 < self.prompts[x.0].rewards.len() {
            Ok(())
        } else {
            Err(LabError::Lookup(format!(
                "unknown response {a} for prompt {x}"
            )))
        }
    }

    pub fn check_record(&self, rec: &PreferenceRecord) -> Result<()> {
        self.check_response(rec.prompt, rec.chosen)?;
        self.check_response(rec.prompt, rec.rejected)?;
        if rec.chosen == rec.rejected {
            return Err(LabError::Argument(format!(
                "record on prompt {} has chosen == rejected",
                rec.prompt
            )));
        }
        if !(rec.weight >= 0.0 && rec.weight.is_finite()) {
            return Err(LabError::Argument(
                "record weight must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn sample_prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> PromptId {
        PromptId(sample_index(&self.prompt_dist, rng))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = EnvDocument {
            version: ENV_VERSION.to_string(),
            prompt_dist: self.prompt_dist.clone(),
            prompts: self.prompts.clone(),
            theta: self.theta.clone(),
            theta_bound: self.theta_bound,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: EnvDocument = serde_json::from_str(s)?;
        if doc.version != ENV_VERSION {
            return Err(LabError::Version {
                expected: ENV_VERSION.into(),
                found: doc.version,
            });
        }
        let env = Self {
            prompt_dist: doc.prompt_dist,
            prompts: doc.prompts,
            theta: doc.theta,
            theta_bound: doc.theta_bound,
        };
        env.validate()?;
        Ok(env)
    }
}

/// Inverse-CDF draw from a probability vector. Falls back to the last
/// positive-mass index if rounding leaves the cumulative sum short of `u`.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardGen {
    /// iid `N(0, scale^2)` per (prompt, response).
    Gaussian {
        scale: f64,
    },
    /// `r* = <theta*, phi>` with `phi ~ N(0, I_dim)` and `|theta*| <= bound`.
    Linear {
        dim: usize,
        bound: f64,
    },
    Fixed {
        table: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthGen {
    /// Uniform integer in `[min, max]`, independent of reward.
    Uniform {
        min: u32,
        max: u32,
    },
    Fixed {
        table: Vec<Vec<u32>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub prompts: usize,
    pub responses: usize,
    /// Defaults to uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dist: Option<Vec<f64>>,
    #[serde(default = "default_reward_gen")]
    pub reward: RewardGen,
    #[serde(default = "default_length_gen")]
    pub lengths: LengthGen,
}

fn default_reward_gen() -> RewardGen {
    RewardGen::Gaussian { scale: 1.0 }
}

fn default_length_gen() -> LengthGen {
    LengthGen::Uniform { min: 50, max: 500 }
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            prompts: 8,
            responses: 8,
            prompt_dist: None,
            reward: default_reward_gen(),
            lengths: default_length_gen(),
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prompts == 0 {
            return Err(LabError::Config("env.prompts must be >= 1".into()));
        }
        if self.responses < 2 {
            return Err(LabError::Config("env.responses must be >= 2".into()));
        }
        match &self.reward {
            RewardGen::Gaussian { scale } if !(*scale >= 0.0 && scale.is_finite()) => {
                return Err(LabError::Config(
                    "env.reward.scale must be finite and >= 0".into(),
                ))
            }
            RewardGen::Linear { dim, bound } => {
                if *dim == 0 {
                    return Err(LabError::Config(
                        "env.reward.dim must be >= 1 in linear mode".into(),
                    ));
                }
                if !(*bound > 0.0 && bound.is_finite()) {
                    return Err(LabError::Config("env.reward.bound must be positive".into()));
                }
            }
            RewardGen::Fixed { table } => {
                check_table_shape(table, self.prompts, self.responses, "reward")?
            }
            _ => {}
        }
        match &self.lengths {
            LengthGen::Uniform { min, max } if min > max => {
                return Err(LabError::Config("env.lengths.min must be <= max".into()))
            }
            LengthGen::Fixed { table } => {
                check_table_shape(table, self.prompts, self.responses, "lengths")?
            }
            _ => {}
        }
        if let Some(d) = &self.prompt_dist {
            if d.len() != self.prompts {
                return Err(LabError::Config(
                    "env.prompt_dist length must equal env.prompts".into(),
                ));
            }
        }
        Ok(())
    }
}

fn check_table_shape<T>(
    table: &[Vec<T>],
    prompts: usize,
    responses: usize,
    what: &str,
) -> Result<()> {
    if table.len() != prompts || table.iter().any(|row| row.len() != responses) {
        return Err(LabError::Config(format!(
            "env.{what}.table must be {prompts} x {responses}"
        )));
    }
    Ok(())
}

/// Builds an environment from a spec; a pure function of `(spec, seed)`.
pub fn make_synthetic_env(spec: &EnvSpec, seed: u64) -> Result<Environment> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let (np, nr) = (spec.prompts, spec.responses);
    let prompt_dist = spec
        .prompt_dist
        .clone()
        .unwrap_or_else(|| vec![1.0 / np as f64; np]);

    let mut lengths_for = |x: usize| -> Vec<u32> {
        match &spec.lengths {
            LengthGen::Uniform { min, max } => {
                (0..nr).map(|_| rng.random_range(*min..=*max)).collect()
            }
            LengthGen::Fixed { table } => table[x].clone(),
        }
    };
    let mut prompts: Vec<PromptResponses> = (0..np)
        .map(|x| PromptResponses {
            rewards: vec![0.0; nr],
            lengths: lengths_for(x),
            features: None,
        })
        .collect();

    match &spec.reward {
        RewardGen::Gaussian { scale } => {
            for p in &mut prompts {
                for r in &mut p.rewards {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *r = scale * z;
                }
            }
            Environment::new(prompt_dist, prompts)
        }
        RewardGen::Fixed { table } => {
            for (p, row) in prompts.iter_mut().zip(table) {
                p.rewards = row.clone();
            }
            Environment::new(prompt_dist, prompts)
        }
        RewardGen::Linear { dim, bound } => {
            let direction: Vec<f64> = (0..*dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let radius = bound * rng.random::<f64>().powf(1.0 / *dim as f64);
            let dn = norm(&direction).max(f64::MIN_POSITIVE);
            let theta: Vec<f64> = direction.iter().map(|v| v * radius / dn).collect();
            for p in &mut prompts {
                let feats = (0..nr)
                    .map(|_| (0..*dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                    .collect();
                p.features = Some(feats);
            }
            Environment::new_linear(prompt_dist, prompts, theta, *bound)
        }
    }
}

/// `P(a1 > a2 | x) = sigmoid(r*(x, a1) - r*(x, a2))`.
pub fn preference_probability(
    env: &Environment,
    x: PromptId,
    a1: ResponseId,
    a2: ResponseId,
) -> Result<f64> {
    env.check_response(x, a1)?;
    env.check_response(x, a2)?;
    Ok(sigmoid(env.true_reward(x, a1) - env.true_reward(x, a2)))
}

/// One Bernoulli query of the oracle.
pub fn sample_preference<R: Rng + ?Sized>(
    env: &Environment,
    x: PromptId,
    a1: ResponseId,
    a2: ResponseId,
    rng: &mut R,
) -> Result<PreferenceLabel> {
    let p = preference_probability(env, x, a1, a2)?;
    Ok(if rng.random::<f64>() < p {
        PreferenceLabel::First
    } else {
        PreferenceLabel::Second
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSample {
    pub records: Vec<PreferenceRecord>,
    /// Records abandoned because every retry drew identical responses.
    pub skipped: usize,
}

/// Offline collection: `x ~ d0`, `a1 ~ behavior1`, `a2 ~ behavior2`, oracle label.
pub fn sample_offline_dataset<R: Rng + ?Sized>(
    env: &Environment,
    behavior1: &Policy,
    behavior2: &Policy,
    m: usize,
    rng: &mut R,
) -> Result<OfflineSample> {
    behavior1.check_env(env)?;
    behavior2.check_env(env)?;
    let mut records = Vec::with_capacity(m);
    let mut skipped = 0;
    for _ in 0..m {
        let x = env.sample_prompt(rng);
        let mut pair = None;
        for _ in 0..=DEFAULT_PAIR_RETRIES {
            let a1 = behavior1.sample(x, rng);
            let a2 = behavior2.sample(x, rng);
            if a1 != a2 {
                pair = Some((a1, a2));
                break;
            }
        }
        let Some((a1, a2)) = pair else {
            skipped += 1;
            continue;
        };
        let rec = match sample_preference(env, x, a1, a2, rng)? {
            PreferenceLabel::First => PreferenceRecord::new(x, a1, a2),
            PreferenceLabel::Second => PreferenceRecord::new(x, a2, a1),
        };
        records.push(rec.with_meta(RecordMeta {
            sampler: Some("offline".into()),
            ..RecordMeta::default()
        }));
    }
    Ok(OfflineSample { records, skipped })
}
