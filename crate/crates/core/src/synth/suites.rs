//! Fixed-seed sequence sets. Training and evaluation seeds never overlap.

use super::generate::{generate_sequence, Sequence};
use super::spec::{Jump, MotionProfile, Occlusion, SequenceSpec};
use crate::error::Result;

pub const TRAIN_SEED_BASE: u64 = 1000;
pub const SMOOTH_SEED_BASE: u64 = 2000;
pub const JUMP_SEED_BASE: u64 = 3000;
pub const OCCLUSION_SEED_BASE: u64 = 4000;
pub const DISTRACTOR_SEED_BASE: u64 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Train,
    Smooth,
    Jump,
    Occlusion,
    Distractor,
}

impl Suite {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "train" => Suite::Train,
            "smooth" => Suite::Smooth,
            "jump" => Suite::Jump,
            "occlusion" => Suite::Occlusion,
            "distractor" => Suite::Distractor,
            _ => return None,
        })
    }

    /// Default number of sequences.
    pub fn default_count(self) -> usize {
        match self {
            Suite::Train => 8,
            Suite::Smooth => 4,
            _ => 12,
        }
    }

    pub fn seed(self, i: usize) -> u64 {
        let base = match self {
            Suite::Train => TRAIN_SEED_BASE,
            Suite::Smooth => SMOOTH_SEED_BASE,
            Suite::Jump => JUMP_SEED_BASE,
            Suite::Occlusion => OCCLUSION_SEED_BASE,
            Suite::Distractor => DISTRACTOR_SEED_BASE,
        };
        base + i as u64
    }

    /// Spec of the `i`-th member.
    pub fn spec(self, i: usize) -> SequenceSpec {
        let seed = self.seed(i);
        let base = SequenceSpec {
            texture_seed: seed.wrapping_mul(7919),
            ..SequenceSpec::default()
        };
        match self {
            Suite::Train => SequenceSpec {
                length: 40,
                target_w: [24.0, 28.0, 32.0, 26.0][i % 4],
                target_h: [28.0, 24.0, 30.0, 26.0][i % 4],
                distractors: i % 3,
                motion: MotionProfile {
                    walk_sigma: 2.0,
                    scale_drift: [0.0, 0.004, -0.004, 0.0][i % 4],
                    illumination_ramp: [0.0, -0.006, 0.0, 0.006][(i / 2) % 4],
                    ..MotionProfile::default()
                },
                ..base
            },
            Suite::Smooth => SequenceSpec {
                length: 60,
                motion: MotionProfile { walk_sigma: 1.0, ..MotionProfile::default() },
                ..base
            },
            Suite::Jump => {
                // Single-axis displacements of 36 px, past the sampler's reach
                // but inside the cosine-windowed motion search. Axis and sign
                // rotate with the index; the second jump returns the target.
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let (ux, uy) = if (i / 2) % 2 == 0 { (sign, 0.0) } else { (0.0, sign) };
                SequenceSpec {
                    length: 40,
                    start: Some([64.0 - ux * 18.0, 64.0 - uy * 18.0]),
                    motion: MotionProfile {
                        walk_sigma: 0.5,
                        jumps: vec![
                            Jump { frame: 12, dx: ux * 36.0, dy: uy * 36.0 },
                            Jump { frame: 26, dx: -ux * 36.0, dy: -uy * 36.0 },
                        ],
                        ..MotionProfile::default()
                    },
                    ..base
                }
            }
            // Target brightness doubles over the sequence and its highlights
            // clip, so the first-frame template goes stale. Darkening only
            // rescales features, which normalized embeddings ignore.
            Suite::Occlusion => SequenceSpec {
                length: 40,
                motion: MotionProfile {
                    walk_sigma: 0.5,
                    occlusion: Some(Occlusion { start: 14, duration: 10, coverage: 0.6 }),
                    illumination_ramp: 0.025,
                    ..MotionProfile::default()
                },
                ..base
            },
            Suite::Distractor => SequenceSpec {
                length: 40,
                distractors: 3,
                motion: MotionProfile { walk_sigma: 1.0, ..MotionProfile::default() },
                ..base
            },
        }
    }

    pub fn generate(self, i: usize) -> Result<Sequence> {
        let mut seq = generate_sequence(&self.spec(i), self.seed(i))?;
        seq.name = format!("{}{:02}", self.name(), i);
        Ok(seq)
    }

    pub fn generate_all(self, n: usize) -> Result<Vec<Sequence>> {
        (0..n).map(|i| self.generate(i)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Train => "train",
            Suite::Smooth => "smooth",
            Suite::Jump => "jump",
            Suite::Occlusion => "occlusion",
            Suite::Distractor => "distractor",
        }
    }
}
