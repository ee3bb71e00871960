use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::MenConfig;
use crate::error::{Error, Result};
use crate::geometry::{extract_patch, BBox};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    conv2d_batch, conv2d_batch_backward, lrn, lrn_backward, relu, relu_backward, sgd_step,
    weighted_softmax_loss, LayerParams, LrnParams, ParamGrads, SgdState,
};
use crate::synth::Sequence;
use crate::tensor::Tensor;

/// Fixed feature stage of the motion network: strided conv, ReLU, LRN.
#[derive(Debug, Clone, PartialEq)]
pub struct Fmen {
    pub conv: LayerParams,
    pub lrn: LrnParams,
    stride: usize,
    input: usize,
}

/// Square window of side `factor * sqrt(w h)` centered on `target`.
pub fn search_window(target: &BBox, factor: f64) -> BBox {
    let (cx, cy) = target.center();
    let side = factor * (target.w * target.h).sqrt();
    BBox::from_center(cx, cy, side, side)
}

/// Resampled, zero-centred search patch.
pub fn search_patch(image: &Tensor, window: &BBox, input: usize) -> Result<Tensor> {
    let mut p = extract_patch(image, window, input, input)?;
    p.data_mut().iter_mut().for_each(|v| *v -= 0.5);
    Ok(p)
}

/// Multiplies every channel of a CHW map by a `[1, h, w]` window.
pub fn apply_window(features: &mut Tensor, window: &Tensor) -> Result<()> {
    let (c, h, w) = features.chw()?;
    if window.shape() != [1, h, w] {
        return Err(Error::Config(format!("window {:?} does not fit {h}x{w} features", window.shape())));
    }
    let win = window.data();
    for plane in features.data_mut().chunks_exact_mut(h * w).take(c) {
        plane.iter_mut().zip(win).for_each(|(v, k)| *v *= k);
    }
    Ok(())
}

impl Fmen {
    pub fn new<R: Rng + ?Sized>(cfg: &MenConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            conv: LayerParams::he(cfg.fmen_filters, 3, cfg.fmen_kernel, rng).with_frozen(true),
            lrn: cfg.lrn,
            stride: cfg.fmen_stride,
            input: cfg.search_input,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv.out_channels()
    }

    fn check(&self, patch: &Tensor) -> Result<()> {
        if patch.shape() != [3, self.input, self.input] {
            return Err(Error::Config(format!(
                "motion network expects a [3, {n}, {n}] patch, got {:?}",
                patch.shape(),
                n = self.input
            )));
        }
        Ok(())
    }

    pub fn forward(&self, patch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_batch(&[patch])?.remove(0))
    }

    pub fn forward_batch(&self, patches: &[&Tensor]) -> Result<Vec<Tensor>> {
        for p in patches {
            self.check(p)?;
        }
        conv2d_batch(patches, &self.conv, self.stride, 0)?
            .iter()
            .map(|pre| lrn(&relu(pre), &self.lrn))
            .collect()
    }

    /// Cosine-windowed features of the search `window` in `image`.
    pub fn window_features(&self, image: &Tensor, window: &BBox, cos: &Tensor) -> Result<Tensor> {
        let mut f = self.forward(&search_patch(image, window, self.input)?)?;
        apply_window(&mut f, cos)?;
        Ok(f)
    }

    pub fn save_to(&self, ck: &mut Checkpoint) {
        ck.push("fmen.conv.weight", self.conv.weights.clone());
        ck.push("fmen.conv.bias", self.conv.bias.clone());
    }

    pub fn load_from(cfg: &MenConfig, ck: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.fmen_kernel;
        Ok(Self {
            conv: LayerParams::new(
                ck.take("fmen.conv.weight", &[cfg.fmen_filters, 3, k, k])?,
                ck.take("fmen.conv.bias", &[cfg.fmen_filters])?,
            )?
            .with_frozen(true),
            lrn: cfg.lrn,
            stride: cfg.fmen_stride,
            input: cfg.search_input,
        })
    }
}

/// Foreground/background labels of every score cell for a window.
fn cell_labels(window: &BBox, gt: &BBox, side: usize) -> (Vec<usize>, [f64; 2]) {
    let labels: Vec<usize> = (0..side * side)
        .map(|i| {
            let x = window.x + ((i % side) as f64 + 0.5) / side as f64 * window.w;
            let y = window.y + ((i / side) as f64 + 0.5) / side as f64 * window.h;
            usize::from(x >= gt.x && x < gt.right() && y >= gt.y && y < gt.bottom())
        })
        .collect();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let n = labels.len() as f64;
    let w = |c: usize| if c == 0 { 0.0 } else { n / (2.0 * c as f64) };
    let weights = [w(labels.len() - pos), w(pos)];
    (labels, weights)
}

/// Trains the conv stage with a throw-away 1x1 foreground/background head on
/// windows around corpus targets, then freezes it. Returns the per-iteration
/// loss.
pub fn pretrain_fmen(cfg: &MenConfig, corpus: &[Sequence], seed: u64) -> Result<(Fmen, Vec<f64>)> {
    let usable: Vec<&Sequence> = corpus.iter().filter(|s| !s.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::Config("motion-network pretraining needs a non-empty corpus".into()));
    }
    let p = &cfg.pretrain;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fmen = Fmen::new(cfg, &mut rng)?;
    fmen.conv.frozen = false;
    let mut head = LayerParams::gaussian(2, cfg.fmen_filters, 1, 0.01, &mut rng);
    let mut sgd = SgdState::new(&[&fmen.conv, &head], p.lr, p.momentum, p.weight_decay, p.batch_size)?;
    let mut losses = Vec::with_capacity(p.iterations);
    for it in 0..p.iterations {
        let mut patches = Vec::with_capacity(p.batch_size);
        let mut targets = Vec::with_capacity(p.batch_size);
        for _ in 0..p.batch_size {
            let seq = usable[rng.gen_range(0..usable.len())];
            let f = rng.gen_range(0..seq.len());
            let gt = seq.gt[f];
            let base = search_window(&gt, cfg.search_factor);
            let dx = rng.gen_range(-p.max_offset..=p.max_offset) * base.w;
            let dy = rng.gen_range(-p.max_offset..=p.max_offset) * base.h;
            let win = base.translate(dx, dy);
            patches.push(search_patch(&seq.frames[f], &win, cfg.search_input)?);
            targets.push(cell_labels(&win, &gt, cfg.score_map));
        }
        let refs: Vec<&Tensor> = patches.iter().collect();
        let pre = conv2d_batch(&refs, &fmen.conv, cfg.fmen_stride, 0)?;
        let act: Vec<Tensor> = pre.iter().map(relu).collect();
        let feats: Vec<Tensor> = act.iter().map(|a| lrn(a, &fmen.lrn)).collect::<Result<_>>()?;
        let frefs: Vec<&Tensor> = feats.iter().collect();
        let logits = conv2d_batch(&frefs, &head, 1, 0)?;
        let inv = 1.0 / p.batch_size as f64;
        let mut loss = 0.0;
        let mut glogits = Vec::with_capacity(p.batch_size);
        for (l, (labels, w)) in logits.iter().zip(&targets) {
            let (li, mut g) = weighted_softmax_loss(l, labels, w)?;
            loss += li * inv;
            g.scale(inv);
            glogits.push(g);
        }
        let grefs: Vec<&Tensor> = glogits.iter().collect();
        let (gfeat, head_grads) = conv2d_batch_backward(&frefs, &head, 1, 0, &grefs, true)?;
        let gpre: Vec<Tensor> = gfeat
            .iter()
            .zip(act.iter().zip(&pre))
            .map(|(g, (a, z))| relu_backward(z, &lrn_backward(a, &fmen.lrn, g)?))
            .collect::<Result<_>>()?;
        let gpre_refs: Vec<&Tensor> = gpre.iter().collect();
        let (_, conv_grads) = conv2d_batch_backward(&refs, &fmen.conv, cfg.fmen_stride, 0, &gpre_refs, false)?;
        if !loss.is_finite() || !conv_grads.all_finite() {
            return Err(Error::Divergence(format!("motion-network pretraining loss {loss} at iteration {it}")));
        }
        let grads: [ParamGrads; 2] = [conv_grads, head_grads];
        sgd_step(&mut [&mut fmen.conv, &mut head], &grads, &mut sgd)?;
        losses.push(loss);
    }
    fmen.conv.frozen = true;
    Ok((fmen, losses))
}
