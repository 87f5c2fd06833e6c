//! Experiment configuration: one TOML file drives corpus generation,
//! model roster, dimensions, training hyperparameters, verification, the
//! update mechanism, and attack grids. Every random stream is derived
//! from the single master seed through named substreams.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvipError};
use crate::labeling::{LabelerDims, LabelerTrainConfig};
use crate::models::{ModelRole, ModelSpec};
use crate::numerics::rng::{substream, substream_indexed};
use crate::proxy::ProxyTrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum CorpusSource {
    /// Seeded Markov babble, no external data.
    Synthetic { size: usize },
    /// Newline-delimited UTF-8 prompts.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    #[serde(flatten)]
    pub source: CorpusSource,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            source: CorpusSource::Synthetic { size: 5000 },
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
        }
    }
}

/// Desk-scale dimensional defaults; paper-scale values (T=48, d_s=48,
/// d_y=128, d_g=1024) are accepted through the same fields.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DimsConfig {
    pub t: usize,
    pub d_s: usize,
    pub d_y: usize,
    pub d_g: usize,
    pub d_u: usize,
    pub d_secret: usize,
}

impl Default for DimsConfig {
    fn default() -> Self {
        DimsConfig {
            t: 16,
            d_s: 16,
            d_y: 32,
            d_g: 64,
            d_u: 32,
            d_secret: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub hidden_dim: usize,
    pub depth: usize,
    pub seed: u64,
    #[serde(default = "default_family")]
    pub family: String,
    pub role: ModelRole,
}

fn default_family() -> String {
    "toy".to_string()
}

impl ModelEntry {
    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            name: self.name.clone(),
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            seed: self.seed,
            family: self.family.clone(),
            role: self.role,
        }
    }
}

fn default_roster() -> Vec<ModelEntry> {
    vec![
        ModelEntry {
            name: "spec-a".into(),
            hidden_dim: 64,
            depth: 3,
            seed: 1001,
            family: "toy-large".into(),
            role: ModelRole::Specified,
        },
        ModelEntry {
            name: "spec-b".into(),
            hidden_dim: 80,
            depth: 3,
            seed: 1002,
            family: "toy-large".into(),
            role: ModelRole::Specified,
        },
        ModelEntry {
            name: "alt-a".into(),
            hidden_dim: 32,
            depth: 2,
            seed: 2001,
            family: "toy-small".into(),
            role: ModelRole::Alternative,
        },
        ModelEntry {
            name: "alt-b".into(),
            hidden_dim: 40,
            depth: 2,
            seed: 2002,
            family: "toy-small".into(),
            role: ModelRole::Alternative,
        },
        ModelEntry {
            name: "alt-c".into(),
            hidden_dim: 48,
            depth: 2,
            seed: 2003,
            family: "toy-small".into(),
            role: ModelRole::Alternative,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationConfig {
    pub percentile: f64,
    pub secrets_per_prompt: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub histogram_bins: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            percentile: 0.95,
            secrets_per_prompt: 30,
            tau: 0.5,
            batch_size: 30,
            histogram_bins: 40,
        }
    }
}

/// Secret rotation and retraining caps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UpdateConfig {
    /// Queries per secret before the next secret is activated.
    pub m_star: u64,
    /// Secrets per protocol generation before full retraining.
    pub n_star: usize,
    /// Minimum queries between consecutive activations.
    pub min_rotation_interval: u64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            m_star: 50,
            n_star: 20,
            min_rotation_interval: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackGridConfig {
    pub adapter_budgets: Vec<usize>,
    /// Independent (secret, initialization) runs per budget point.
    pub adapter_seeds: usize,
    pub recovery_budgets: Vec<usize>,
    pub recovery_seeds: usize,
    pub recovery_test_pairs: usize,
    pub direct_steps: usize,
    pub direct_lr: f64,
}

impl Default for AttackGridConfig {
    fn default() -> Self {
        AttackGridConfig {
            adapter_budgets: vec![25, 50, 100, 200, 400],
            adapter_seeds: 5,
            recovery_budgets: vec![100, 500, 2000, 10000],
            recovery_seeds: 3,
            recovery_test_pairs: 1000,
            direct_steps: 100,
            direct_lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub dims: DimsConfig,
    pub roster: Vec<ModelEntry>,
    pub labeler: LabelerTrainConfig,
    pub proxy: ProxyTrainConfig,
    pub verification: VerificationConfig,
    pub update: UpdateConfig,
    pub attacks: AttackGridConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            corpus: CorpusConfig::default(),
            dims: DimsConfig::default(),
            roster: default_roster(),
            labeler: LabelerTrainConfig::default(),
            proxy: ProxyTrainConfig::default(),
            verification: VerificationConfig::default(),
            update: UpdateConfig::default(),
            attacks: AttackGridConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| SvipError::Config(format!("cannot read config: {e}")))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| SvipError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.corpus.train_ratio + self.corpus.val_ratio + self.corpus.test_ratio;
        if (r - 1.0).abs() > 1e-9 {
            return Err(SvipError::Config(format!("split ratios sum to {r}, expected 1")));
        }
        if self.dims.t == 0 || self.dims.d_s == 0 || self.dims.d_g == 0 || self.dims.d_y == 0 {
            return Err(SvipError::Config("dimensions must be positive".into()));
        }
        let n_spec = self
            .roster
            .iter()
            .filter(|m| m.role == ModelRole::Specified)
            .count();
        if n_spec == 0 {
            return Err(SvipError::Config("roster needs at least one specified model".into()));
        }
        let mut names: Vec<&str> = self.roster.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.roster.len() {
            return Err(SvipError::Config("duplicate model names in roster".into()));
        }
        if !(0.0..=1.0).contains(&self.verification.percentile) {
            return Err(SvipError::Config("percentile outside [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.labeler.w) {
            return Err(SvipError::Config("labeler weight w outside [0,1]".into()));
        }
        if self.update.m_star == 0 || self.update.n_star == 0 {
            return Err(SvipError::Config("update caps must be positive".into()));
        }
        Ok(())
    }

    pub fn labeler_dims(&self) -> LabelerDims {
        LabelerDims {
            d_s: self.dims.d_s,
            d_u: self.dims.d_u,
            d_secret: self.dims.d_secret,
            d_y: self.dims.d_y,
        }
    }

    pub fn specified(&self) -> Vec<ModelSpec> {
        self.roster
            .iter()
            .filter(|m| m.role == ModelRole::Specified)
            .map(|m| m.to_spec())
            .collect()
    }

    pub fn alternatives(&self) -> Vec<ModelSpec> {
        self.roster
            .iter()
            .filter(|m| m.role == ModelRole::Alternative)
            .map(|m| m.to_spec())
            .collect()
    }

    /// Named randomness substream (corpus / init / secrets / attacks ...).
    pub fn rng(&self, name: &str) -> ChaCha12Rng {
        substream(self.seed, name)
    }

    pub fn rng_indexed(&self, name: &str, index: u64) -> ChaCha12Rng {
        substream_indexed(self.seed, name, index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.roster.len(), 5);
        assert_eq!(back.dims.d_g, 64);
    }

    #[test]
    fn bad_ratios_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.corpus.train_ratio = 0.9;
        assert!(matches!(cfg.validate(), Err(SvipError::Config(_))));
    }

    #[test]
    fn duplicate_roster_names_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.roster[1].name = cfg.roster[0].name.clone();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_file_maps_to_config_error() {
        let err = ExperimentConfig::load("/nonexistent/config.toml").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn substreams_differ_by_name() {
        use rand::Rng;
        let cfg = ExperimentConfig::default();
        let a: u64 = cfg.rng("corpus").gen();
        let b: u64 = cfg.rng("init").gen();
        let a2: u64 = cfg.rng("corpus").gen();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }
}
