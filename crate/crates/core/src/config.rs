//! One document holding every module config, loaded from TOML or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Mode};
use crate::phantom::PhantomConfig;
use crate::seed::sha256_hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaterConfig {
    pub n_real: usize,
    pub n_synth: usize,
}

impl Default for RaterConfig {
    fn default() -> Self {
        Self {
            n_real: 182,
            n_synth: 120,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub mode: Mode,
    /// Manifest CSV of a real dataset; the phantom generator is used when
    /// absent.
    pub manifest: Option<PathBuf>,
    /// Directory image paths in the manifest are relative to; defaults to
    /// the manifest's directory.
    pub image_root: Option<PathBuf>,
    pub phantom: PhantomConfig,
    pub experiment: ExperimentConfig,
    pub rater: RaterConfig,
    /// Samples drawn by `gan-sample`.
    pub synth_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            mode: Mode::AugGan,
            manifest: None,
            image_root: None,
            phantom: PhantomConfig::default(),
            experiment: ExperimentConfig::default(),
            rater: RaterConfig::default(),
            synth_samples: 64,
        }
    }
}

impl RunConfig {
    /// Parses `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::validation("jobs must be at least 1"));
        }
        self.phantom.validate()?;
        self.experiment.validate()
    }

    /// Hash over every field, via the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_hash() {
        let cfg = RunConfig {
            seed: 7,
            ..Default::default()
        };
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[experiment]\nfolds = 2\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.experiment.folds, 2);
        assert_eq!(cfg.experiment.classic_schedule, ExperimentConfig::default().classic_schedule);
    }

    #[test]
    fn hash_changes_with_any_field() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.experiment.classifier.dropout = 0.4;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sead = 3\n").is_err());
    }
}
