use rand::seq::index::sample;
use rand::Rng;

use super::config::MenConfig;
use super::labels::ScoreLabels;
use crate::error::{Error, Result};
use crate::nn::{
    conv2d_batch, conv2d_batch_backward, relu, relu_backward, sgd_step, weighted_softmax_loss,
    LayerParams, ParamGrads, SgdState,
};
use crate::tensor::Tensor;

/// Adaptive head: two 1x1 convolutions producing a 2-channel score map.
#[derive(Debug, Clone, PartialEq)]
pub struct Amen {
    pub l1: LayerParams,
    pub l2: LayerParams,
}

impl Amen {
    pub fn new<R: Rng + ?Sized>(cfg: &MenConfig, in_channels: usize, rng: &mut R) -> Self {
        Self {
            l1: LayerParams::gaussian(cfg.hidden(), in_channels, 1, cfg.init_std, rng)
                .with_lr_multiplier(cfg.lr_multipliers[0]),
            l2: LayerParams::gaussian(2, cfg.hidden(), 1, cfg.init_std, rng).with_lr_multiplier(cfg.lr_multipliers[1]),
        }
    }

    pub fn sgd(&self, cfg: &MenConfig) -> Result<SgdState> {
        SgdState::new(&[&self.l1, &self.l2], cfg.lr, cfg.momentum, cfg.weight_decay, cfg.batch_size)
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.forward_batch(&[features])?.remove(0))
    }

    pub fn forward_batch(&self, features: &[&Tensor]) -> Result<Vec<Tensor>> {
        let hidden: Vec<Tensor> = conv2d_batch(features, &self.l1, 1, 0)?.iter().map(relu).collect();
        let refs: Vec<&Tensor> = hidden.iter().collect();
        conv2d_batch(&refs, &self.l2, 1, 0)
    }

    /// Mean class-weighted loss over a batch and its parameter gradients.
    pub fn loss_and_grads(&self, features: &[&Tensor], labels: &ScoreLabels) -> Result<(f64, [ParamGrads; 2])> {
        let pre = conv2d_batch(features, &self.l1, 1, 0)?;
        let hidden: Vec<Tensor> = pre.iter().map(relu).collect();
        let hrefs: Vec<&Tensor> = hidden.iter().collect();
        let logits = conv2d_batch(&hrefs, &self.l2, 1, 0)?;
        let inv = 1.0 / features.len() as f64;
        let mut loss = 0.0;
        let mut g = Vec::with_capacity(logits.len());
        for l in &logits {
            let (li, mut gi) = weighted_softmax_loss(l, &labels.labels, &labels.class_weights)?;
            loss += li * inv;
            gi.scale(inv);
            g.push(gi);
        }
        let grefs: Vec<&Tensor> = g.iter().collect();
        let (gh, g2) = conv2d_batch_backward(&hrefs, &self.l2, 1, 0, &grefs, true)?;
        let gpre: Vec<Tensor> = gh.iter().zip(&pre).map(|(g, z)| relu_backward(z, g)).collect::<Result<_>>()?;
        let prefs: Vec<&Tensor> = gpre.iter().collect();
        let (_, g1) = conv2d_batch_backward(features, &self.l1, 1, 0, &prefs, false)?;
        Ok((loss, [g1, g2]))
    }
}

/// Runs `iterations` minibatch steps over windowed feature maps. Returns
/// the loss of each step.
pub fn train_amen<R: Rng + ?Sized>(
    amen: &mut Amen,
    features: &[Tensor],
    labels: &ScoreLabels,
    iterations: usize,
    sgd: &mut SgdState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    train_amen_with(amen, features.len(), |i| Ok(features[i].clone()), labels, iterations, sgd, rng)
}

/// As [`train_amen`] but fetching the `n` training maps lazily by index, so
/// compact caches are only expanded one batch at a time.
pub fn train_amen_with<R: Rng + ?Sized>(
    amen: &mut Amen,
    n: usize,
    mut fetch: impl FnMut(usize) -> Result<Tensor>,
    labels: &ScoreLabels,
    iterations: usize,
    sgd: &mut SgdState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 || iterations == 0 {
        return Ok(Vec::new());
    }
    let batch = sgd.batch_size.min(n);
    let mut losses = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let maps = sample(rng, n, batch).iter().map(&mut fetch).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = maps.iter().collect();
        let (loss, grads) = amen.loss_and_grads(&refs, labels)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Divergence(format!("motion head loss {loss} at iteration {it}")));
        }
        sgd_step(&mut [&mut amen.l1, &mut amen.l2], &grads, sgd)?;
        losses.push(loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cosine_window;
    use crate::men::fmen::{apply_window, search_window, Fmen};
    use crate::men::labels::{argmax_cell, make_score_labels};
    use crate::nn::gradcheck::{finite_diff_grad, relative_error};
    use crate::synth::{generate_sequence, SequenceSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_logits() {
        let cfg = MenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = Amen::new(&cfg, 16, &mut rng);
        a.l1.weights = Tensor::zeros(a.l1.weights.shape());
        a.l2.weights = Tensor::zeros(a.l2.weights.shape());
        let out = a.forward(&Tensor::uniform(&[16, 51, 51], 0.0, 1.0, &mut rng)).unwrap();
        assert_eq!(out.shape(), &[2, 51, 51]);
        assert!(out.data().iter().all(|&v| v == 0.0));
        let out = a.forward(&Tensor::uniform(&[5, 9, 9], 0.0, 1.0, &mut rng));
        assert!(out.is_err());
    }

    #[test]
    fn spatial_extent_preserved() {
        let cfg = MenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in [1, 3, 16] {
            let a = Amen::new(&cfg, c, &mut rng);
            assert_eq!(a.forward(&Tensor::zeros(&[c, 51, 51])).unwrap().shape(), &[2, 51, 51]);
        }
    }

    #[test]
    fn swapping_output_filters_swaps_channels() {
        let cfg = MenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Amen::new(&cfg, 6, &mut rng);
        let mut b = a.clone();
        let h = cfg.hidden();
        let w = b.l2.weights.data_mut();
        for j in 0..h {
            w.swap(j, h + j);
        }
        b.l2.bias.data_mut().swap(0, 1);
        let x = Tensor::uniform(&[6, 51, 51], 0.0, 1.0, &mut rng);
        let (ya, yb) = (a.forward(&x).unwrap(), b.forward(&x).unwrap());
        let n = 51 * 51;
        assert_eq!(&ya.data()[..n], &yb.data()[n..]);
        assert_eq!(&ya.data()[n..], &yb.data()[..n]);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let cfg = MenConfig { amen_hidden: Some(3), ..MenConfig::default() };
        let labels = make_score_labels(7, 2.0).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
            let mut a = Amen::new(&cfg, 4, &mut rng);
            a.l1.weights = Tensor::randn(a.l1.weights.shape(), 0.5, &mut rng);
            a.l2.weights = Tensor::randn(a.l2.weights.shape(), 0.5, &mut rng);
            a.l1.bias = Tensor::randn(a.l1.bias.shape(), 0.1, &mut rng);
            let xs: Vec<Tensor> = (0..2).map(|_| Tensor::randn(&[4, 7, 7], 1.0, &mut rng)).collect();
            let refs: Vec<&Tensor> = xs.iter().collect();
            let (_, g) = a.loss_and_grads(&refs, &labels).unwrap();
            for (li, grad) in g.iter().enumerate() {
                for (which, ana) in [(0, &grad.weights), (1, &grad.bias)] {
                    let base = a.clone();
                    let x0 = {
                        let l = if li == 0 { &base.l1 } else { &base.l2 };
                        if which == 0 { l.weights.clone() } else { l.bias.clone() }
                    };
                    let num = finite_diff_grad(
                        |p| {
                            let mut m = base.clone();
                            let l = if li == 0 { &mut m.l1 } else { &mut m.l2 };
                            if which == 0 { l.weights = p.clone() } else { l.bias = p.clone() }
                            m.loss_and_grads(&refs, &labels).unwrap().0
                        },
                        &x0,
                        1e-5,
                    );
                    assert!(relative_error(ana, &num) < 1e-4, "layer {li} part {which}");
                }
            }
        }
    }

    #[test]
    fn zero_iterations_change_nothing() {
        let cfg = MenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a = Amen::new(&cfg, 16, &mut rng);
        let before = a.clone();
        let mut sgd = a.sgd(&cfg).unwrap();
        let labels = make_score_labels(51, 12.0).unwrap();
        let feats = vec![Tensor::zeros(&[16, 51, 51])];
        train_amen(&mut a, &feats, &labels, 0, &mut sgd, &mut rng).unwrap();
        assert_eq!(a, before);
    }

    #[test]
    fn single_frame_training_peaks_near_center() {
        let cfg = MenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = SequenceSpec { length: 1, ..SequenceSpec::default() };
        let seq = generate_sequence(&spec, 8).unwrap();
        let fmen = Fmen::new(&cfg, &mut rng).unwrap();
        let cos = cosine_window(51, 51).unwrap();
        let win = search_window(&seq.gt[0], cfg.search_factor);
        let mut f = fmen.forward(&crate::men::fmen::search_patch(&seq.frames[0], &win, 107).unwrap()).unwrap();
        apply_window(&mut f, &cos).unwrap();
        let mut a = Amen::new(&cfg, 16, &mut rng);
        let mut sgd = a.sgd(&cfg).unwrap();
        let labels = make_score_labels(51, cfg.radius).unwrap();
        let losses = train_amen(&mut a, &[f.clone()], &labels, 30, &mut sgd, &mut rng).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let (r, c) = argmax_cell(&a.forward(&f).unwrap()).unwrap();
        let d = ((r as f64 - 25.0).powi(2) + (c as f64 - 25.0).powi(2)).sqrt();
        assert!(d <= cfg.radius, "argmax ({r},{c})");
    }
}
