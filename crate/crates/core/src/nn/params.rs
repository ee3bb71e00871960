use rand::Rng;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Weights and bias of one convolutional layer.
///
/// Weights are `[out, in, k, k]`, bias is `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub lr_multiplier: f64,
    pub frozen: bool,
}

impl LayerParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(shape_err(
                "LayerParams::new",
                format!("weights must be [out, in, k, k], got {:?}", weights.shape()),
            ));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(shape_err(
                "LayerParams::new",
                format!(
                    "bias {:?} does not match {} output channels",
                    bias.shape(),
                    weights.shape()[0]
                ),
            ));
        }
        Ok(Self {
            weights,
            bias,
            lr_multiplier: 1.0,
            frozen: false,
        })
    }

    /// Zero-mean Gaussian weights with the given standard deviation, zero bias.
    pub fn gaussian<R: Rng + ?Sized>(
        out_ch: usize,
        in_ch: usize,
        kernel: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weights: Tensor::randn(&[out_ch, in_ch, kernel, kernel], std, rng),
            bias: Tensor::zeros(&[out_ch]),
            lr_multiplier: 1.0,
            frozen: false,
        }
    }

    /// He-normal initialisation for layers followed by a ReLU.
    pub fn he<R: Rng + ?Sized>(out_ch: usize, in_ch: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        Self::gaussian(out_ch, in_ch, kernel, (2.0 / fan_in).sqrt(), rng)
    }

    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            lr_multiplier: 1.0,
            frozen: false,
        }
    }

    pub fn with_lr_multiplier(mut self, m: f64) -> Self {
        self.lr_multiplier = m;
        self
    }

    pub fn with_frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }
}

/// Gradients with the same layout as a [`LayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ParamGrads {
    pub fn zeros_like(p: &LayerParams) -> Self {
        Self {
            weights: Tensor::zeros(p.weights.shape()),
            bias: Tensor::zeros(p.bias.shape()),
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) -> Result<()> {
        self.weights.add_assign(&other.weights)?;
        self.bias.add_assign(&other.bias)
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.scale(k);
        self.bias.scale(k);
    }

    pub fn all_finite(&self) -> bool {
        self.weights.all_finite() && self.bias.all_finite()
    }
}
