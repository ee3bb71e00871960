use std::f64::consts::PI;

use super::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source index pair and interpolation weight for each output coordinate.
fn axis_taps(start: f64, extent: f64, out: usize, limit: usize) -> Vec<(usize, usize, f64)> {
    let step = extent / out as f64;
    (0..out)
        .map(|j| {
            let s = start + (j as f64 + 0.5) * step - 0.5;
            let f = s.floor();
            let frac = s - f;
            let clamp = |v: f64| v.max(0.0).min((limit - 1) as f64) as usize;
            (clamp(f), clamp(f + 1.0), frac)
        })
        .collect()
}

/// Crops `region` from a CHW image and bilinearly resamples it to `out_h x out_w`.
///
/// Pixels outside the image replicate the nearest edge pixel. Regions with no
/// overlap at all are rejected.
pub fn extract_patch(image: &Tensor, region: &BBox, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    region.validate()?;
    let ow = region.right().min(w as f64) - region.x.max(0.0);
    let oh = region.bottom().min(h as f64) - region.y.max(0.0);
    if ow <= 0.0 || oh <= 0.0 {
        return Err(Error::NoOverlap(region.to_string()));
    }
    let xs = axis_taps(region.x, region.w, out_w, w);
    let ys = axis_taps(region.y, region.h, out_h, h);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for &(x0, x1, fx) in &xs {
                let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Outer product of two Hann windows, shape `[1, h, w]`.
pub fn cosine_window(h: usize, w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 {
        return Err(Error::Config("cosine window extents must be positive".into()));
    }
    let (wy, wx) = (hann(h), hann(w));
    Ok(Tensor::from_fn(&[1, h, w], |i| wy[i / w] * wx[i % w]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_box_at_native_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = Tensor::randn(&[3, 9, 13], 1.0, &mut rng);
        let p = extract_patch(&img, &BBox::new(0.0, 0.0, 13.0, 9.0), 9, 13).unwrap();
        assert!(p.max_abs_diff(&img) < 1e-15);
    }

    #[test]
    fn constant_image_gives_constant_patch() {
        let img = Tensor::full(&[3, 10, 10], 0.25);
        for b in [BBox::new(-5.0, -5.0, 8.0, 8.0), BBox::new(3.3, 2.1, 40.0, 3.0)] {
            let p = extract_patch(&img, &b, 7, 5).unwrap();
            assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn checkerboard_halving_averages_pairs() {
        // Each output sample sits exactly between two source pixels of opposite
        // colour in both axes, so the bilinear stencil averages four pixels:
        // (1 + 0 + 0 + 1) / 4.
        let img = Tensor::from_fn(&[1, 4, 4], |i| ((i / 4 + i % 4) % 2) as f64);
        let p = extract_patch(&img, &BBox::new(0.0, 0.0, 4.0, 4.0), 2, 2).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0.5, 0.5]);
        // a 2-pixel-period stripe image downsampled by 2 keeps the row means
        let stripes = Tensor::from_fn(&[1, 4, 4], |i| if (i / 4) < 2 { 1.0 } else { 3.0 });
        let q = extract_patch(&stripes, &BBox::new(0.0, 0.0, 4.0, 4.0), 2, 2).unwrap();
        assert_eq!(q.data(), &[1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn disjoint_region_is_rejected() {
        let img = Tensor::zeros(&[1, 10, 10]);
        let err = extract_patch(&img, &BBox::new(20.0, 0.0, 5.0, 5.0), 3, 3).unwrap_err();
        assert!(matches!(err, Error::NoOverlap(_)));
    }

    #[test]
    fn window_shape_and_symmetry() {
        assert_eq!(cosine_window(1, 1).unwrap().data(), &[1.0]);
        let w = cosine_window(4, 5).unwrap();
        for x in 0..5 {
            assert_eq!(w.get3(0, 0, x), 0.0);
            assert_eq!(w.get3(0, 3, x), 0.0);
        }
        let big = cosine_window(51, 51).unwrap();
        let mut best = (0, 0, f64::MIN);
        for y in 0..51 {
            for x in 0..51 {
                let v = big.get3(0, y, x);
                assert!((v - big.get3(0, 50 - y, x)).abs() < 1e-15);
                assert!((v - big.get3(0, y, 50 - x)).abs() < 1e-15);
                if v > best.2 {
                    best = (y, x, v);
                }
            }
        }
        assert_eq!((best.0, best.1), (25, 25));
        assert!((best.2 - 1.0).abs() < 1e-15);
    }
}
