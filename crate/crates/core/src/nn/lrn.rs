use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cross-channel local response normalisation:
/// `y_c = x_c / (k + alpha * sum_{|c'-c| <= depth_radius} x_{c'}^2)^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrnParams {
    pub depth_radius: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        // window of 5 channels
        Self {
            depth_radius: 2,
            alpha: 1e-4,
            beta: 0.75,
            k: 2.0,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config(format!(
                "lrn: need k > 0, alpha >= 0, beta >= 0 (got k={}, alpha={}, beta={})",
                self.k, self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Per-position denominators `k + alpha * windowed sum of squares`.
fn scales(input: &Tensor, p: &LrnParams) -> Result<(Vec<f64>, usize, usize)> {
    p.validate()?;
    let (c, h, w) = input.chw()?;
    let hw = h * w;
    let x = input.data();
    let mut s = vec![p.k; c * hw];
    for ci in 0..c {
        let lo = ci.saturating_sub(p.depth_radius);
        let hi = (ci + p.depth_radius).min(c - 1);
        for cj in lo..=hi {
            let src = &x[cj * hw..(cj + 1) * hw];
            let dst = &mut s[ci * hw..(ci + 1) * hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += p.alpha * v * v;
            }
        }
    }
    Ok((s, c, hw))
}

pub fn lrn(input: &Tensor, p: &LrnParams) -> Result<Tensor> {
    let (s, _, _) = scales(input, p)?;
    let data = input
        .data()
        .iter()
        .zip(&s)
        .map(|(&x, &s)| x * s.powf(-p.beta))
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Analytic backward pass of [`lrn`].
pub fn lrn_backward(input: &Tensor, p: &LrnParams, grad: &Tensor) -> Result<Tensor> {
    input.check_same_shape(grad, "lrn_backward")?;
    let (s, c, hw) = scales(input, p)?;
    let x = input.data();
    let g = grad.data();
    // t_c = g_c * x_c * s_c^(-beta-1)
    let t: Vec<f64> = (0..c * hw).map(|i| g[i] * x[i] * s[i].powf(-p.beta - 1.0)).collect();
    let mut out: Vec<f64> = (0..c * hw).map(|i| g[i] * s[i].powf(-p.beta)).collect();
    let coef = 2.0 * p.alpha * p.beta;
    for cj in 0..c {
        let lo = cj.saturating_sub(p.depth_radius);
        let hi = (cj + p.depth_radius).min(c - 1);
        for ci in lo..=hi {
            for pos in 0..hw {
                out[cj * hw + pos] -= coef * x[cj * hw + pos] * t[ci * hw + pos];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}
