//! Run configuration, read from JSON or TOML. Sections mirror the core
//! config structs field for field; anything omitted takes its default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ssg_core::eval::RankingOptions;
use ssg_core::model::ModelConfig;
use ssg_core::synth::SyntheticConfig;
use ssg_core::trainer::{PretrainConfig, TrainConfig};

use crate::{read_text, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SyntheticConfig,
    /// Defaults to the desk-scale model sized by `data`.
    pub model: Option<ModelConfig>,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: RankingOptions,
    pub analyze: AnalyzeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub entropy_bins: usize,
    pub factorization: Option<FactorizationWorld>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            entropy_bins: 4,
            factorization: Some(FactorizationWorld::default()),
        }
    }
}

/// A discrete world for the factorization check: class prior, observation
/// likelihood per class, and the edge table `P(e | a, b)` in row-major
/// `(a, b)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorizationWorld {
    pub prior: Vec<f64>,
    pub likelihood: Vec<Vec<f64>>,
    pub n_outcomes: usize,
    pub table: Vec<f64>,
    /// Steps of the posterior-sharpening entropy sweep.
    pub sweep_steps: usize,
}

impl Default for FactorizationWorld {
    fn default() -> Self {
        Self {
            prior: vec![0.6, 0.4],
            likelihood: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            n_outcomes: 2,
            table: vec![0.9, 0.1, 0.3, 0.7, 0.6, 0.4, 0.2, 0.8],
            sweep_steps: 10,
        }
    }
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        self.model
            .clone()
            .unwrap_or_else(|| ModelConfig::desk(self.data.n_obj, self.data.n_pred))
    }

    /// Routes one seed to every random source.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.pretrain.seed = seed;
        self.pretrain.modal_seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let m = self.model();
        m.validate()?;
        if (m.n_obj, m.n_pred) != (self.data.n_obj, self.data.n_pred) {
            return Err(Error::invalid(format!(
                "model sized for {} classes / {} predicates but data has {} / {}",
                m.n_obj, m.n_pred, self.data.n_obj, self.data.n_pred
            )));
        }
        self.pretrain.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// `.toml` files are TOML; anything else is JSON. No path gives defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = read_text(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    let cfg: RunConfig = parsed.map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_toml(text: &str) -> RunConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn toml_sections_override_defaults() {
        let cfg = parse_toml("[train]\nlr = 0.001\nepochs = 3\n\n[train.flags]\nbeg = false\n");
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.epochs, 3);
        assert!(!cfg.train.flags.beg && cfg.train.flags.gse);
        assert_eq!(cfg.pretrain, PretrainConfig::default());
    }

    #[test]
    fn json_and_toml_agree() {
        let json: RunConfig = serde_json::from_str(r#"{"pretrain": {"tau": 0.1}, "data": {"n_scenes": 12}}"#).unwrap();
        assert_eq!(json, parse_toml("[pretrain]\ntau = 0.1\n[data]\nn_scenes = 12\n"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[train]\nlearning_rate = 1.0\n").is_err());
    }

    #[test]
    fn seed_reaches_every_section() {
        let cfg = RunConfig::default().with_seed(7);
        assert_eq!(
            [cfg.data.seed, cfg.pretrain.seed, cfg.pretrain.modal_seed, cfg.train.seed],
            [7; 4]
        );
    }

    #[test]
    fn mismatched_model_is_a_validation_error() {
        let cfg = RunConfig {
            model: Some(ModelConfig::desk(3, 5)),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
