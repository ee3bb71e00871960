use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bbox::{iou, BBox, BoxState};
use crate::error::{Error, Result};

/// Gaussian candidate generator around one or two center states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_candidates: usize,
    /// Positional variance as a fraction of `v^2`, `v` the mean box side.
    pub sigma_xy_factor: f64,
    /// Variance of the log-scale exponent `g` in `s * scale_step^g`.
    pub sigma_s: f64,
    pub scale_step: f64,
    /// Fraction of candidates drawn around the first (motion-estimated) center.
    pub split_ratio: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_candidates: 256,
            sigma_xy_factor: 0.09,
            sigma_s: 0.25,
            scale_step: 1.1,
            split_ratio: 0.5,
            min_scale: 0.2,
            max_scale: 5.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sampler.{m}")));
        if self.n_candidates == 0 {
            return bad("n_candidates must be positive");
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return bad("split_ratio must lie in [0, 1]");
        }
        if self.sigma_xy_factor < 0.0 || self.sigma_s < 0.0 {
            return bad("variances must be non-negative");
        }
        if !(self.scale_step > 0.0) {
            return bad("scale_step must be positive");
        }
        if !(0.0 < self.min_scale && self.min_scale <= self.max_scale) {
            return bad("scale clamp must satisfy 0 < min_scale <= max_scale");
        }
        Ok(())
    }
}

fn draw_around<R: Rng + ?Sized>(c: &BoxState, cfg: &SamplerConfig, rng: &mut R) -> BoxState {
    let v = c.mean_size();
    let sd_xy = cfg.sigma_xy_factor.sqrt() * v;
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    let zs: f64 = rng.sample(StandardNormal);
    let g = cfg.sigma_s.sqrt() * zs;
    BoxState {
        cx: c.cx + sd_xy * zx,
        cy: c.cy + sd_xy * zy,
        s: (c.s * cfg.scale_step.powf(g)).clamp(cfg.min_scale, cfg.max_scale),
        ..*c
    }
}

/// Draws `cfg.n_candidates` states.
///
/// With two centers the first `ceil(split_ratio * n)` candidates are drawn
/// around `centers[0]` and the remainder around `centers[1]`.
pub fn sample_candidates<R: Rng + ?Sized>(
    centers: &[BoxState],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<BoxState>> {
    cfg.validate()?;
    let n = cfg.n_candidates;
    let n_first = match centers.len() {
        1 => n,
        2 => (cfg.split_ratio * n as f64).ceil() as usize,
        k => {
            return Err(Error::Config(format!(
                "sample_candidates takes one or two centers, got {k}"
            )))
        }
    };
    Ok((0..n)
        .map(|i| {
            let c = if i < n_first { &centers[0] } else { &centers[centers.len() - 1] };
            draw_around(c, cfg, rng)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingDraw {
    /// Boxes with IoU above the threshold.
    Positive,
    /// Boxes with IoU below the threshold.
    Negative,
}

/// Rejection-samples up to `n` training boxes around `gt`, labelled by IoU.
///
/// Positives jitter the ground truth slightly; negatives mix a local ring
/// around the target with uniform draws over the image. Box centers always
/// stay inside `image_size`. Fewer than `n` boxes come back only if the
/// rejection budget runs out.
pub fn sample_training_boxes<R: Rng + ?Sized>(
    gt: &BBox,
    kind: TrainingDraw,
    n: usize,
    threshold: f64,
    image_size: (usize, usize),
    rng: &mut R,
) -> Vec<BBox> {
    let (iw, ih) = (image_size.0 as f64, image_size.1 as f64);
    let v = 0.5 * (gt.w + gt.h);
    let (gcx, gcy) = gt.center();
    let mut out = Vec::with_capacity(n);
    let budget = 200 * n.max(1);
    for attempt in 0..budget {
        if out.len() == n {
            break;
        }
        let b = match kind {
            TrainingDraw::Positive => {
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                let zs: f64 = rng.sample(StandardNormal);
                let s = 1.05f64.powf(zs);
                BBox::from_center(gcx + 0.1 * v * zx, gcy + 0.1 * v * zy, gt.w * s, gt.h * s)
            }
            TrainingDraw::Negative => {
                let s = 1.3f64.powf(rng.gen_range(-1.0..1.0));
                let (cx, cy) = if attempt % 2 == 0 {
                    (gcx + rng.gen_range(-2.0..2.0) * v, gcy + rng.gen_range(-2.0..2.0) * v)
                } else {
                    (rng.gen_range(0.0..iw), rng.gen_range(0.0..ih))
                };
                BBox::from_center(cx, cy, gt.w * s, gt.h * s)
            }
        };
        let (cx, cy) = b.center();
        if cx < 0.0 || cy < 0.0 || cx >= iw || cy >= ih {
            continue;
        }
        let o = iou(&b, gt);
        let keep = match kind {
            TrainingDraw::Positive => o > threshold,
            TrainingDraw::Negative => o < threshold,
        };
        if keep {
            out.push(b);
        }
    }
    out
}
