//! Versioned policy snapshots.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::policy::Policy;

pub const CHECKPOINT_VERSION: &str = "rlhf-lab.checkpoint.v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub config_hash: String,
    pub iteration: usize,
    pub policy: Policy,
}

impl Checkpoint {
    pub fn new(policy: Policy, meta: CheckpointMeta) -> Self {
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            config_hash: meta.config_hash,
            iteration: meta.iteration,
            policy,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Checks the version tag before interpreting anything else.
    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let found = value
            .get("version")
            .and_then(|v| v.as_str())
            .unwrap_or("<missing>");
        if found != CHECKPOINT_VERSION {
            return Err(LabError::Version {
                expected: CHECKPOINT_VERSION.into(),
                found: found.into(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn save_checkpoint(policy: &Policy, meta: CheckpointMeta, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    let text = Checkpoint::new(policy.clone(), meta).to_json()?;
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_version_check() {
        let policy = Policy::from_logits(
            vec![vec![0.1, -1.0 / 3.0, 2.5e-17], vec![1e300, -700.0]],
            0.7,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let meta = CheckpointMeta {
            config_hash: "abc".into(),
            iteration: 3,
        };
        save_checkpoint(&policy, meta.clone(), &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.policy, policy);
        assert_eq!(back.config_hash, "abc");
        assert_eq!(back.iteration, 3);
        let tampered = std::fs::read_to_string(&path)
            .unwrap()
            .replace(CHECKPOINT_VERSION, "rlhf-lab.checkpoint.v0");
        assert!(matches!(
            Checkpoint::from_json(&tampered),
            Err(LabError::Version { .. })
        ));
    }
}
