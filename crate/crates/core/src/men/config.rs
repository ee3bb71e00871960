use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_output_extent, LrnParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FmenPretrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Largest window-center offset, as a fraction of the window side.
    pub max_offset: f64,
}

impl Default for FmenPretrainConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            batch_size: 8,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            max_offset: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MenConfig {
    /// Side of the resampled search patch.
    pub search_input: usize,
    /// Search window side as a multiple of the geometric mean target size.
    pub search_factor: f64,
    pub fmen_kernel: usize,
    pub fmen_stride: usize,
    pub fmen_filters: usize,
    /// Hidden width of the adaptive head; half the feature width when absent.
    pub amen_hidden: Option<usize>,
    pub score_map: usize,
    /// Positive-label radius in score-map cells.
    pub radius: f64,
    pub lrn: LrnParams,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_multipliers: [f64; 2],
    pub init_std: f64,
    pub init_epochs: usize,
    pub update_epochs: usize,
    pub init_positives: usize,
    pub update_positives: usize,
    pub pretrain: FmenPretrainConfig,
}

impl Default for MenConfig {
    fn default() -> Self {
        Self {
            search_input: 107,
            search_factor: 4.0,
            fmen_kernel: 7,
            fmen_stride: 2,
            fmen_filters: 16,
            amen_hidden: None,
            score_map: 51,
            radius: 12.0,
            lrn: LrnParams::default(),
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 8,
            lr_multipliers: [3.0, 30.0],
            init_std: 0.01,
            init_epochs: 30,
            update_epochs: 10,
            init_positives: 5,
            update_positives: 50,
            pretrain: FmenPretrainConfig::default(),
        }
    }
}

impl MenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("men.{m}")));
        if self.fmen_stride == 0 || self.fmen_kernel == 0 || self.fmen_filters == 0 {
            return bad("fmen_kernel, fmen_stride and fmen_filters must be positive".into());
        }
        let side = conv_output_extent(self.search_input, self.fmen_kernel, self.fmen_stride, 0)
            .map_err(|e| Error::Config(format!("men.search_input: {e}")))?;
        if side != self.score_map || (self.search_input - self.fmen_kernel) % self.fmen_stride != 0 {
            return bad(format!(
                "score_map {} does not match ({} - {}) / {} + 1",
                self.score_map, self.search_input, self.fmen_kernel, self.fmen_stride
            ));
        }
        if !(self.radius >= 0.0 && self.radius < self.score_map as f64 / 2.0) {
            return bad(format!("radius {} must lie in [0, score_map / 2)", self.radius));
        }
        if !(self.search_factor > 0.0) {
            return bad("search_factor must be positive".into());
        }
        if self.batch_size == 0 || self.amen_hidden == Some(0) {
            return bad("batch_size and amen_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || self.lr < 0.0 || self.weight_decay < 0.0 {
            return bad("need lr >= 0, weight_decay >= 0, momentum in [0, 1)".into());
        }
        self.lrn.validate()
    }

    pub fn hidden(&self) -> usize {
        self.amen_hidden.unwrap_or((self.fmen_filters / 2).max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_chain_is_consistent() {
        let c = MenConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hidden(), 8);
    }

    #[test]
    fn broken_chain_is_rejected() {
        let c = MenConfig { search_input: 108, ..MenConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("score_map"));
        let c = MenConfig { radius: 26.0, ..MenConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("radius"));
    }
}
