//! Region-of-interest max pooling onto a fixed `bins x bins` grid.

use crate::error::{shape_err, Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RoiPoolOutput {
    /// `[channels, bins, bins]`.
    pub output: Tensor,
    /// Flat feature index that produced each output value; `None` for empty bins.
    pub argmax: Vec<Option<usize>>,
    /// Set when the region lies entirely outside the feature map.
    pub degenerate: bool,
}

/// Cell range `[start, end)` of every bin along one axis, clamped to `[0, limit)`.
fn bin_ranges(lo: f64, hi: f64, bins: usize, limit: usize) -> Vec<(usize, usize)> {
    let start = lo.round() as i64;
    let end = hi.round() as i64;
    let extent = (end - start).max(1) as f64;
    let size = extent / bins as f64;
    (0..bins)
        .map(|b| {
            let s = start + (b as f64 * size).floor() as i64;
            let e = start + ((b + 1) as f64 * size).ceil() as i64;
            let s = s.clamp(0, limit as i64) as usize;
            let e = e.clamp(0, limit as i64) as usize;
            (s, e.max(s))
        })
        .collect()
}

/// Max-pools `roi` (image coordinates) from a CHW `feature` map.
///
/// The region is scaled by `spatial_scale`, snapped to the feature grid and
/// split into `bins x bins` cells; empty cells produce 0.
pub fn roi_pool(feature: &Tensor, roi: &BBox, bins: usize, spatial_scale: f64) -> Result<RoiPoolOutput> {
    let (c, h, w) = feature.chw()?;
    if !roi.is_valid() {
        return Err(Error::DegenerateBox(roi.to_string()));
    }
    if !(spatial_scale > 0.0) || bins == 0 {
        return Err(Error::Config("roi_pool needs spatial_scale > 0 and bins > 0".into()));
    }
    let xs = bin_ranges(roi.x * spatial_scale, roi.right() * spatial_scale, bins, w);
    let ys = bin_ranges(roi.y * spatial_scale, roi.bottom() * spatial_scale, bins, h);
    let degenerate = xs.iter().all(|(s, e)| s == e) || ys.iter().all(|(s, e)| s == e);
    let mut out = vec![0.0; c * bins * bins];
    let mut argmax = vec![None; c * bins * bins];
    if !degenerate {
        let data = feature.data();
        for ci in 0..c {
            let plane = ci * h * w;
            for (by, &(ys_, ye)) in ys.iter().enumerate() {
                for (bx, &(xs_, xe)) in xs.iter().enumerate() {
                    let mut best: Option<usize> = None;
                    for y in ys_..ye {
                        for x in xs_..xe {
                            let idx = plane + y * w + x;
                            if best.map_or(true, |b| data[idx] > data[b]) {
                                best = Some(idx);
                            }
                        }
                    }
                    let o = (ci * bins + by) * bins + bx;
                    if let Some(b) = best {
                        out[o] = data[b];
                    }
                    argmax[o] = best;
                }
            }
        }
    }
    Ok(RoiPoolOutput {
        output: Tensor::new(vec![c, bins, bins], out)?,
        argmax,
        degenerate,
    })
}

/// Accumulates `grad_out` into `grad_feature` at the recorded argmax cells.
pub fn roi_pool_backward(pooled: &RoiPoolOutput, grad_out: &Tensor, grad_feature: &mut Tensor) -> Result<()> {
    if grad_out.shape() != pooled.output.shape() {
        return Err(shape_err(
            "roi_pool_backward",
            format!("grad_out {:?} vs output {:?}", grad_out.shape(), pooled.output.shape()),
        ));
    }
    let n = grad_feature.len();
    let gf = grad_feature.data_mut();
    for (g, idx) in grad_out.data().iter().zip(&pooled.argmax) {
        if let Some(i) = *idx {
            if i >= n {
                return Err(shape_err("roi_pool_backward", "argmax outside gradient buffer"));
            }
            gf[i] += g;
        }
    }
    Ok(())
}
