use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

/// Channel of the score map holding the target class.
pub const POSITIVE: usize = 1;

/// Per-cell class labels of a square score map with class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLabels {
    pub side: usize,
    pub labels: Vec<usize>,
    /// `N / (2 n_c)`: the mean weight over all cells is 1.
    pub class_weights: [f64; 2],
    pub positives: usize,
}

/// Cells within `radius` (Euclidean, in cells) of the map center are positive.
pub fn make_score_labels(side: usize, radius: f64) -> Result<ScoreLabels> {
    if side == 0 {
        return Err(Error::Config("score map side must be positive".into()));
    }
    let c = (side as f64 - 1.0) / 2.0;
    let labels: Vec<usize> = (0..side * side)
        .map(|i| {
            let (r, col) = ((i / side) as f64, (i % side) as f64);
            usize::from(((r - c).powi(2) + (col - c).powi(2)).sqrt() <= radius)
        })
        .collect();
    let positives = labels.iter().filter(|&&l| l == POSITIVE).count();
    let n = labels.len() as f64;
    let weight = |count: usize| if count == 0 { 0.0 } else { n / (2.0 * count as f64) };
    Ok(ScoreLabels {
        side,
        class_weights: [weight(labels.len() - positives), weight(positives)],
        labels,
        positives,
    })
}

/// Row and column of the first maximum of the positive channel.
pub fn argmax_cell(logits: &Tensor) -> Result<(usize, usize)> {
    let (c, h, w) = logits.chw()?;
    if c <= POSITIVE {
        return Err(Error::Config(format!("score map needs 2 channels, got {c}")));
    }
    let plane = &logits.data()[POSITIVE * h * w..(POSITIVE + 1) * h * w];
    let mut best = 0;
    for (i, &v) in plane.iter().enumerate() {
        if v > plane[best] {
            best = i;
        }
    }
    Ok((best / w, best % w))
}

/// Maps the positive-channel argmax to the image point at the cell center.
pub fn backproject_argmax(logits: &Tensor, window: &BBox) -> Result<(f64, f64)> {
    let (_, h, w) = logits.chw()?;
    let (r, c) = argmax_cell(logits)?;
    Ok((
        window.x + (c as f64 + 0.5) / w as f64 * window.w,
        window.y + (r as f64 + 0.5) / h as f64 * window.h,
    ))
}

/// Writes the positive channel as rows of comma-separated values.
pub fn write_score_map_csv<W: Write>(mut out: W, logits: &Tensor) -> Result<()> {
    let (_, h, w) = logits.chw()?;
    for r in 0..h {
        let row: Vec<String> = (0..w).map(|c| logits.get3(POSITIVE, r, c).to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Min-max normalised grayscale image of the positive channel.
pub fn score_heatmap(logits: &Tensor) -> Result<GrayImage> {
    let (_, h, w) = logits.chw()?;
    let plane = &logits.data()[POSITIVE * h * w..(POSITIVE + 1) * h * w];
    let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (plane[y as usize * w + x as usize] - lo) / span;
        Luma([(v * 255.0).round() as u8])
    }))
}

pub fn save_heatmap(path: &Path, logits: &Tensor) -> Result<()> {
    score_heatmap(logits)?.save(path)?;
    Ok(())
}
