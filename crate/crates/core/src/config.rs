//! Top-level run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SamplerConfig;
use crate::men::MenConfig;
use crate::siamese::{SiameseConfig, SiameseTrainConfig};
use crate::tracker::TrackerConfig;
use crate::wcnn::WcnnConfig;

/// Every tunable of training and tracking. Missing tables fall back to
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub siamese: SiameseConfig,
    pub siamese_train: SiameseTrainConfig,
    pub men: MenConfig,
    pub wcnn: WcnnConfig,
    pub sampler: SamplerConfig,
    pub tracker: TrackerConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.siamese.validate()?;
        self.siamese_train.validate()?;
        self.men.validate()?;
        self.wcnn.validate()?;
        self.sampler.validate()?;
        self.tracker.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = Config::default();
        cfg.tracker.tau_short = 7;
        cfg.wcnn.beta = 0.3;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Config::from_toml_str("[tracker]\nscore_gat = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("score_gat"), "{err}");
        assert!(Config::from_toml_str("[trackr]\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let err = Config::from_toml_str("[tracker]\ntau_short = 200\n").unwrap_err();
        assert!(err.to_string().contains("tau_short"), "{err}");
    }
}
