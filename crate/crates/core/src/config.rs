//! One configuration document covering every pipeline stage.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bootstrap::BootstrapConfig;
use crate::classifier::TrainConfig;
use crate::eval::SparsityConfig;
use crate::exec::ExecConfig;
use crate::synth::SynthesisConfig;
use crate::scene::SceneConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcgenConfig {
    /// Grammar file; the bundled bedroom grammar when absent.
    pub grammar: Option<String>,
    /// Oracle evaluation cases written next to the scenes.
    pub cases: usize,
}

impl Default for ProcgenConfig {
    fn default() -> Self {
        ProcgenConfig { grammar: None, cases: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dilation_radius: usize,
    pub negatives_per_object: usize,
    pub consistency_repeats: usize,
    pub sca_seeds: usize,
    pub sparsity: SparsityConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dilation_radius: 2,
            negatives_per_object: 2,
            consistency_repeats: 5,
            sca_seeds: 5,
            sparsity: SparsityConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub exec: ExecConfig,
    pub procgen: ProcgenConfig,
    pub classifier: TrainConfig,
    pub bootstrap: BootstrapConfig,
    pub synthesis: SynthesisConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.exec.validate().map_err(|e| invalid(&e))?;
        self.bootstrap.validate().map_err(|e| invalid(&e))?;
        crate::scene::GridSpec::new(self.scene.grid_w, self.scene.grid_h, self.scene.cell, [0.0, 0.0]).map_err(|e| invalid(&e))?;
        if !(0.0..1.0).contains(&self.classifier.holdout_fraction) {
            return Err(ConfigError::Invalid("classifier.holdout_fraction must lie in [0, 1)".into()));
        }
        if self.eval.sparsity.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(ConfigError::Invalid("sparsity fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
