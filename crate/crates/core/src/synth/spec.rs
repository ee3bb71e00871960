use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sudden displacement of the target center between frame `frame - 1` and `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    /// 1-based frame index at which the target appears displaced.
    pub frame: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occlusion {
    /// First occluded frame (1-based).
    pub start: usize,
    pub duration: usize,
    /// Fraction of the target width hidden, starting from its left edge.
    pub coverage: f64,
}

/// How the target moves and changes over time. Components compose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionProfile {
    /// Standard deviation of the per-frame velocity innovation, pixels.
    pub walk_sigma: f64,
    pub jumps: Vec<Jump>,
    pub occlusion: Option<Occlusion>,
    /// Per-frame additive change of the target brightness factor.
    pub illumination_ramp: f64,
    /// Per-frame relative size change.
    pub scale_drift: f64,
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self {
            walk_sigma: 0.0,
            jumps: Vec::new(),
            occlusion: None,
            illumination_ramp: 0.0,
            scale_drift: 0.0,
        }
    }
}

/// Description of one synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSpec {
    pub length: usize,
    pub width: usize,
    pub height: usize,
    pub target_w: f64,
    pub target_h: f64,
    /// Initial target center; drawn near the image center when absent.
    pub start: Option<[f64; 2]>,
    pub texture_seed: u64,
    pub motion: MotionProfile,
    pub distractors: usize,
    /// Per-pixel Gaussian sensor noise.
    pub noise: f64,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            length: 60,
            width: 128,
            height: 128,
            target_w: 28.0,
            target_h: 28.0,
            start: None,
            texture_seed: 0,
            motion: MotionProfile::default(),
            distractors: 0,
            noise: 0.01,
        }
    }
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.length == 0 {
            return bad("length must be at least 1".into());
        }
        if self.width < 8 || self.height < 8 {
            return bad(format!("image {}x{} is too small", self.width, self.height));
        }
        if !(self.target_w >= 2.0 && self.target_h >= 2.0) {
            return bad("target_w and target_h must be at least 2 pixels".into());
        }
        if self.target_w >= self.width as f64 || self.target_h >= self.height as f64 {
            return bad("target does not fit inside the image".into());
        }
        let m = &self.motion;
        if !(m.walk_sigma >= 0.0 && self.noise >= 0.0) {
            return bad("walk_sigma and noise must be non-negative".into());
        }
        if !(m.scale_drift > -1.0) {
            return bad("scale_drift must exceed -1".into());
        }
        if let Some(o) = &m.occlusion {
            if !(0.0..=1.0).contains(&o.coverage) || o.start == 0 {
                return bad("occlusion needs start >= 1 and coverage in [0, 1]".into());
            }
        }
        if m.jumps.iter().any(|j| j.frame < 2) {
            return bad("jumps can only occur from frame 2 on".into());
        }
        Ok(())
    }

    /// Whether 1-based `frame` falls inside the occlusion interval.
    pub fn occluded(&self, frame: usize) -> bool {
        self.motion
            .occlusion
            .map_or(false, |o| frame >= o.start && frame < o.start + o.duration)
    }
}
