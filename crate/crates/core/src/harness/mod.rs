//! Configuration, persistence and experiment orchestration behind the CLI.
//!
//! A run is a pure function of its resolved [`ExperimentConfig`]: every
//! random draw comes from a named stream of the master seed (see
//! [`crate::seeds`]). Streams in use: `env`, `reference`, `scorer`,
//! `offline`, `loop`, `validation`, `data`, `format`, `explore`, `analysis`.
//!
//! Config files are TOML, or JSON when the extension is `.json`. Unknown keys
//! are rejected at every level.

mod checkpoint;
mod experiments;
mod ingest;

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION,
};
pub use experiments::{
    analyze_length_bias, compare_runs, fit_pref_model, fit_reward, gen_env, run_iterative,
    run_offline, run_theoretical, CompareRow, Outcome,
};
pub use ingest::{ingest_preference_file, IngestOptions, IngestReport, RejectedLine};

use crate::env::{make_synthetic_env, EnvSpec, Environment};
use crate::error::{LabError, Result};
use crate::iterative::{LoopConfig, ScorerSpec};
use crate::linear::LinearExploreConfig;
use crate::optim::OptimOpts;
use crate::policy::Policy;
use crate::reward::{PairFeatures, RewardMode};
use crate::seeds::SeedStreams;

/// Environment variable naming the root under which runs without an explicit
/// output directory are written.
pub const OUTPUT_ROOT_VAR: &str = "RLHF_LAB_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "rlhf-lab-runs";

/// The base policy `pi_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    Uniform,
    /// Logits drawn iid `N(0, scale^2)`.
    RandomLogits {
        scale: f64,
    },
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::RandomLogits { scale: 1.0 }
    }
}

pub fn build_reference(
    spec: &ReferenceSpec,
    env: &Environment,
    streams: &SeedStreams,
) -> Result<Policy> {
    match spec {
        ReferenceSpec::Uniform => Ok(Policy::uniform(env)),
        ReferenceSpec::RandomLogits { scale } => {
            let normal = Normal::new(0.0, *scale)
                .map_err(|e| LabError::Config(format!("reference.scale: {e}")))?;
            let mut rng = streams.rng("reference");
            let logits = env
                .prompt_ids()
                .map(|x| {
                    (0..env.n_responses(x))
                        .map(|_| normal.sample(&mut rng))
                        .collect()
                })
                .collect();
            Policy::from_logits(logits, 1.0)
        }
    }
}

/// Fitting a standalone reward model (`fit-reward`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardFitSpec {
    pub mode: RewardMode,
    /// Oracle-labeled pairs sampled from `pi_0 x pi_0` when no data file is given.
    pub pairs: usize,
    pub opts: OptimOpts,
}

impl Default for RewardFitSpec {
    fn default() -> Self {
        Self {
            mode: RewardMode::Tabular,
            pairs: 10_000,
            opts: OptimOpts::default(),
        }
    }
}

/// Fitting a pairwise preference model (`fit-pref-model`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefModelSpec {
    pub features: PairFeatures,
    pub pairs: usize,
    pub opts: OptimOpts,
}

impl Default for PrefModelSpec {
    fn default() -> Self {
        Self {
            features: PairFeatures::TabularDifference,
            pairs: 10_000,
            opts: OptimOpts::default(),
        }
    }
}

/// Length-bias audit settings (`analyze-length-bias`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub n_prompts: usize,
    pub n_resp: usize,
    /// Policy to sample from; `pi_0` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_checkpoint: Option<PathBuf>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            n_prompts: 200,
            n_resp: 8,
            policy_checkpoint: None,
        }
    }
}

/// External preference data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSpec {
    /// Output directories of earlier runs.
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub env: EnvSpec,
    /// Load the environment from a saved `env.json` instead of generating it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env_file: Option<PathBuf>,
    pub reference: ReferenceSpec,
    pub scorer: ScorerSpec,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub explore: LinearExploreConfig,
    pub reward_fit: RewardFitSpec,
    pub pref_model: PrefModelSpec,
    pub analysis: AnalysisSpec,
    pub data: DataSpec,
    pub compare: CompareSpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if let ReferenceSpec::RandomLogits { scale } = self.reference {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(LabError::Config(
                    "reference.scale must be finite and >= 0".into(),
                ));
            }
        }
        self.scorer.validate()?;
        self.loop_cfg.validate()?;
        self.explore.validate()?;
        self.reward_fit.opts.validate()?;
        self.pref_model.opts.validate()?;
        if self.analysis.n_resp < 2 {
            return Err(LabError::Config("analysis.n_resp must be >= 2".into()));
        }
        if let Some(t) = self.data.margin_threshold {
            if !t.is_finite() {
                return Err(LabError::Config(
                    "data.margin_threshold must be finite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| LabError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The resolved config, every default spelled out.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form with `output_dir` cleared.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn streams(&self) -> SeedStreams {
        SeedStreams::new(self.master_seed)
    }

    /// `env_file` when given, otherwise the generated environment.
    pub fn environment(&self) -> Result<Environment> {
        match &self.env_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
                Environment::from_json(&text)
            }
            None => {
                let mut bytes = [0u8; 8];
                bytes.copy_from_slice(&self.streams().key("env")[..8]);
                make_synthetic_env(&self.env, u64::from_le_bytes(bytes))
            }
        }
    }

    /// Explicit `output_dir`, else `$RLHF_LAB_OUTPUT_ROOT/<command>-<hash prefix>`,
    /// else the same under `./rlhf-lab-runs`.
    pub fn resolve_output_dir(&self, command: &str) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
        root.join(format!("{command}-{}", &self.hash()[..12]))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg = if is_json {
        ExperimentConfig::from_json_str(&text)
    } else {
        ExperimentConfig::from_toml_str(&text)
    };
    cfg.map_err(|e| match e {
        LabError::Config(msg) => LabError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    std::fs::write(&path, contents).map_err(|e| LabError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.loop_cfg.rejection_n, 8);
        assert_eq!(cfg.loop_cfg.temperatures, vec![1.0, 0.7]);
        assert_eq!(cfg.loop_cfg.eta, 0.1);
        assert_eq!(cfg.loop_cfg.length_penalty, 0.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("[loop]\nlearningrate = 0.1\n").unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
        assert!(err.to_string().contains("learningrate"), "{err}");
        let err = ExperimentConfig::from_json_str(r#"{"learningrate": 1}"#).unwrap_err();
        assert!(err.to_string().contains("learningrate"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg =
            ExperimentConfig::from_toml_str("master_seed = 7\n[loop]\niterations = 2\n").unwrap();
        let again = ExperimentConfig::from_json_str(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            output_dir: Some("/tmp/x".into()),
            ..a.clone()
        };
        let c = ExperimentConfig {
            master_seed: 1,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = ExperimentConfig::from_toml_str("[loop]\neta = -1.0\n").unwrap_err();
        assert!(matches!(err, LabError::Config(_)));
    }
}
