use super::params::{LayerParams, ParamGrads};
use crate::error::{shape_err, Error, Result};

/// Momentum SGD state for a fixed, ordered list of layers.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<ParamGrads>,
    pub global_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl SgdState {
    pub fn new(
        layers: &[&LayerParams],
        global_lr: f64,
        momentum: f64,
        weight_decay: f64,
        batch_size: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if weight_decay < 0.0 || batch_size == 0 || !(global_lr >= 0.0) {
            return Err(Error::Config(
                "sgd: need lr >= 0, weight_decay >= 0 and batch_size > 0".into(),
            ));
        }
        Ok(Self {
            velocity: layers.iter().map(|p| ParamGrads::zeros_like(p)).collect(),
            global_lr,
            momentum,
            weight_decay,
            batch_size,
        })
    }

    pub fn velocity(&self) -> &[ParamGrads] {
        &self.velocity
    }
}

/// `v <- momentum v - lr * mult * (g + decay w); w <- w + v` for every unfrozen layer.
pub fn sgd_step(layers: &mut [&mut LayerParams], grads: &[ParamGrads], state: &mut SgdState) -> Result<()> {
    if layers.len() != grads.len() || layers.len() != state.velocity.len() {
        return Err(shape_err(
            "sgd_step",
            format!(
                "{} layers, {} gradients, {} velocity slots",
                layers.len(),
                grads.len(),
                state.velocity.len()
            ),
        ));
    }
    for ((layer, grad), vel) in layers.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        if layer.frozen {
            continue;
        }
        if layer.lr_multiplier < 0.0 {
            return Err(Error::Config("lr_multiplier must be non-negative".into()));
        }
        let lr = state.global_lr * layer.lr_multiplier;
        for (w, g, v) in [
            (&mut layer.weights, &grad.weights, &mut vel.weights),
            (&mut layer.bias, &grad.bias, &mut vel.bias),
        ] {
            w.check_same_shape(g, "sgd_step")?;
            for ((wi, gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = state.momentum * *vi - lr * (gi + state.weight_decay * *wi);
                *wi += *vi;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn layer(w: f64) -> LayerParams {
        LayerParams::new(Tensor::full(&[1, 1, 1, 1], w), Tensor::zeros(&[1])).unwrap()
    }

    fn grad(g: f64) -> ParamGrads {
        ParamGrads {
            weights: Tensor::full(&[1, 1, 1, 1], g),
            bias: Tensor::zeros(&[1]),
        }
    }

    #[test]
    fn plain_step_is_w_minus_lr_g() {
        let mut p = layer(1.0);
        let mut st = SgdState::new(&[&p], 0.1, 0.0, 0.0, 1).unwrap();
        sgd_step(&mut [&mut p], &[grad(2.0)], &mut st).unwrap();
        assert_eq!(p.weights.data()[0], 1.0 - 0.1 * 2.0);
    }

    #[test]
    fn frozen_layer_is_bit_identical() {
        let mut p = layer(0.123456789).with_frozen(true);
        let before = p.clone();
        let mut st = SgdState::new(&[&p], 0.5, 0.9, 0.01, 1).unwrap();
        for _ in 0..3 {
            sgd_step(&mut [&mut p], &[grad(7.0)], &mut st).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn two_momentum_steps_match_hand_unrolled_recurrence() {
        let (lr, mu, wd, mult) = (0.01, 0.9, 0.0005, 3.0);
        let (w0, g1, g2) = (0.5, 2.0, -1.0);
        let mut p = layer(w0).with_lr_multiplier(mult);
        let mut st = SgdState::new(&[&p], lr, mu, wd, 8).unwrap();
        sgd_step(&mut [&mut p], &[grad(g1)], &mut st).unwrap();
        sgd_step(&mut [&mut p], &[grad(g2)], &mut st).unwrap();

        let v1 = -lr * mult * (g1 + wd * w0);
        let w1 = w0 + v1;
        let v2 = mu * v1 - lr * mult * (g2 + wd * w1);
        let w2 = w1 + v2;
        assert!((p.weights.data()[0] - w2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_momentum() {
        let p = layer(0.0);
        assert!(SgdState::new(&[&p], 0.1, 1.0, 0.0, 1).is_err());
    }
}
