use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Fused-score threshold separating confident from unreliable frames.
    pub score_gate: f64,
    /// Frames `t < warmup_frames` always update the buffer and memories.
    pub warmup_frames: usize,
    pub tau_long: usize,
    pub tau_short: usize,
    /// Period of long-term updates.
    pub tau_int: usize,
    /// Weight of the first-frame template in the buffered similarity.
    pub eta: f64,
    pub buffer_capacity: usize,
    pub n1_pos: usize,
    pub n1_neg: usize,
    pub nt_pos: usize,
    pub nt_neg: usize,
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Frame-1 samples kept in memory after initial training.
    pub first_frame_cache_pos: usize,
    pub first_frame_cache_neg: usize,
    /// Workers for candidate embedding.
    pub threads: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            score_gate: 1.6,
            warmup_frames: 4,
            tau_long: 100,
            tau_short: 20,
            tau_int: 10,
            eta: 0.7,
            buffer_capacity: 35,
            n1_pos: 500,
            n1_neg: 5000,
            nt_pos: 50,
            nt_neg: 200,
            pos_iou: 0.7,
            neg_iou: 0.3,
            first_frame_cache_pos: 50,
            first_frame_cache_neg: 200,
            threads: 1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("tracker.{m}")));
        if self.tau_short == 0 || self.tau_short > self.tau_long {
            return bad("need 0 < tau_short <= tau_long");
        }
        if self.tau_int == 0 {
            return bad("tau_int must be positive");
        }
        if [self.n1_pos, self.n1_neg, self.nt_pos, self.nt_neg].contains(&0) {
            return bad("sample counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1]");
        }
        if !(0.0 <= self.neg_iou && self.neg_iou <= self.pos_iou && self.pos_iou <= 1.0) {
            return bad("need 0 <= neg_iou <= pos_iou <= 1");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}
