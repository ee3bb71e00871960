use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{extract_patch, BBox};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    conv2d, conv2d_backward, conv2d_batch, conv2d_batch_backward, l2_normalize_slice,
    l2_normalize_slice_backward, max_pool2d, max_pool2d_backward, relu, relu_backward, roi_pool,
    roi_pool_backward, LayerParams, ParamGrads, RoiPoolOutput,
};
use crate::tensor::Tensor;

/// Conv sublayers per block; max-pools follow the first two blocks.
pub const BLOCK_DEPTHS: [usize; 5] = [2, 2, 3, 3, 3];
const POOLED_BLOCKS: usize = 2;

/// Unit-norm feature vector of one region.
pub type Embedding = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiameseConfig {
    /// Side of the square network input; frames are resampled to it.
    pub input_size: usize,
    /// Output channels of the five conv blocks.
    pub widths: Vec<usize>,
    pub fc_width: usize,
    pub roi_bins: usize,
    pub spatial_scale: f64,
    /// Contrastive margin on squared distance.
    pub margin: f64,
    pub fc_lr_multiplier: f64,
    /// Leading blocks kept at initialisation during training.
    pub frozen_blocks: usize,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            widths: vec![8, 16, 32, 64, 64],
            fc_width: 512,
            roi_bins: 7,
            spatial_scale: 0.25,
            margin: 1.0,
            fc_lr_multiplier: 100.0,
            frozen_blocks: 1,
        }
    }
}

impl SiameseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("siamese.{m}")));
        if self.widths.len() != BLOCK_DEPTHS.len() || self.widths.contains(&0) {
            return bad(format!("widths must list 5 positive channel counts, got {:?}", self.widths));
        }
        if self.input_size < 8 || self.input_size % (1 << POOLED_BLOCKS) != 0 {
            return bad(format!("input_size {} must be a multiple of 4 and at least 8", self.input_size));
        }
        if self.spatial_scale != 1.0 / (1 << POOLED_BLOCKS) as f64 {
            return bad(format!(
                "spatial_scale must be 0.25 (two pooling stages precede the ROI taps), got {}",
                self.spatial_scale
            ));
        }
        if self.roi_bins == 0 || self.fc_width == 0 {
            return bad("roi_bins and fc_width must be positive".into());
        }
        if !(self.margin > 0.0) || self.fc_lr_multiplier < 0.0 {
            return bad("margin must be positive and fc_lr_multiplier non-negative".into());
        }
        if self.frozen_blocks > BLOCK_DEPTHS.len() {
            return bad("frozen_blocks exceeds the number of blocks".into());
        }
        Ok(())
    }

    fn bins2(&self) -> usize {
        self.roi_bins * self.roi_bins
    }

    /// Lengths of the three normalised parts: conv4 ROI, conv5 ROI, fc.
    pub fn part_dims(&self) -> [usize; 3] {
        [self.bins2() * self.widths[3], self.bins2() * self.widths[4], self.fc_width]
    }

    pub fn embed_dim(&self) -> usize {
        self.part_dims().iter().sum()
    }
}

/// Shared backbone maps of one image, tapped for ROI pooling.
#[derive(Debug, Clone)]
pub struct Features {
    pub conv4: Tensor,
    pub conv5: Tensor,
    /// Image-to-network coordinate scale along x and y.
    pub scale: (f64, f64),
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    conv_inputs: Vec<Tensor>,
    pre_relu: Vec<Tensor>,
    pool_inputs: Vec<Tensor>,
}

/// Per-region values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RoiCache {
    p4: RoiPoolOutput,
    p5: RoiPoolOutput,
    raw: [Vec<f64>; 3],
    concat: Vec<f64>,
}

/// Matching branch: VGG-style backbone, three ROI taps, normalised concat.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseNet {
    pub cfg: SiameseConfig,
    pub convs: Vec<LayerParams>,
    pub fc: LayerParams,
}

fn layer_names() -> Vec<String> {
    let mut names = Vec::new();
    for (b, &d) in BLOCK_DEPTHS.iter().enumerate() {
        for j in 0..d {
            names.push(format!("conv{}_{}", b + 1, j + 1));
        }
    }
    names
}

/// Index of the last layer of each block.
fn block_ends() -> [usize; 5] {
    let mut ends = [0; 5];
    let mut acc = 0;
    for (b, &d) in BLOCK_DEPTHS.iter().enumerate() {
        acc += d;
        ends[b] = acc - 1;
    }
    ends
}

impl SiameseNet {
    /// He-initialised network.
    pub fn new<R: Rng + ?Sized>(cfg: SiameseConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(cfg)?;
        for l in &mut net.convs {
            let fan_in = (l.in_channels() * 9) as f64;
            l.weights = Tensor::randn(l.weights.shape(), (2.0 / fan_in).sqrt(), rng);
        }
        let fan_in = (net.cfg.widths[4] * net.cfg.bins2()) as f64;
        net.fc.weights = Tensor::randn(net.fc.weights.shape(), (1.0 / fan_in).sqrt(), rng);
        Ok(net)
    }

    fn zeros(cfg: SiameseConfig) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for (b, &d) in BLOCK_DEPTHS.iter().enumerate() {
            for _ in 0..d {
                convs.push(LayerParams::zeros(cfg.widths[b], in_ch, 3).with_frozen(b < cfg.frozen_blocks));
                in_ch = cfg.widths[b];
            }
        }
        let fc = LayerParams::zeros(cfg.fc_width, cfg.widths[4], cfg.roi_bins).with_lr_multiplier(cfg.fc_lr_multiplier);
        Ok(Self { cfg, convs, fc })
    }

    fn forward(&self, image: &Tensor, keep: bool) -> Result<(Features, Option<Activations>)> {
        let (c, h, w) = image.chw()?;
        if c != 3 {
            return Err(Error::Config(format!("siamese input needs 3 channels, got {c}")));
        }
        let s = self.cfg.input_size;
        let mut x = if h == s && w == s {
            image.clone()
        } else {
            extract_patch(image, &BBox::new(0.0, 0.0, w as f64, h as f64), s, s)?
        };
        x.data_mut().iter_mut().for_each(|v| *v -= 0.5);
        let scale = (s as f64 / w as f64, s as f64 / h as f64);

        let ends = block_ends();
        let mut acts = Activations { conv_inputs: Vec::new(), pre_relu: Vec::new(), pool_inputs: Vec::new() };
        let mut conv4 = None;
        for (li, layer) in self.convs.iter().enumerate() {
            let pre = conv2d(&x, layer, 1, 1)?;
            let out = relu(&pre);
            if keep {
                acts.conv_inputs.push(x);
                acts.pre_relu.push(pre);
            }
            x = out;
            if let Some(b) = ends.iter().position(|&e| e == li) {
                if b < POOLED_BLOCKS {
                    let pooled = max_pool2d(&x)?;
                    if keep {
                        acts.pool_inputs.push(x);
                    }
                    x = pooled;
                } else if b == 3 {
                    conv4 = Some(x.clone());
                }
            }
        }
        let feats = Features { conv4: conv4.expect("four blocks precede conv5"), conv5: x, scale };
        Ok((feats, keep.then_some(acts)))
    }

    /// Runs the shared backbone once for `image`.
    pub fn features(&self, image: &Tensor) -> Result<Features> {
        Ok(self.forward(image, false)?.0)
    }

    pub fn features_for_training(&self, image: &Tensor) -> Result<(Features, Activations)> {
        let (f, a) = self.forward(image, true)?;
        Ok((f, a.expect("activations requested")))
    }

    fn pool_rois(&self, feats: &Features, rois: &[BBox]) -> Result<Vec<(RoiPoolOutput, RoiPoolOutput)>> {
        let (sx, sy) = feats.scale;
        rois.iter()
            .map(|r| {
                let r = r.scale_coords(sx, sy);
                let bins = self.cfg.roi_bins;
                Ok((
                    roi_pool(&feats.conv4, &r, bins, self.cfg.spatial_scale)?,
                    roi_pool(&feats.conv5, &r, bins, self.cfg.spatial_scale)?,
                ))
            })
            .collect()
    }

    fn embed_chunk(&self, feats: &Features, rois: &[BBox], keep: bool) -> Result<Vec<(Result<Embedding>, Option<RoiCache>)>> {
        if rois.is_empty() {
            return Ok(Vec::new());
        }
        let pooled = self.pool_rois(feats, rois)?;
        let p5s: Vec<&Tensor> = pooled.iter().map(|(_, p5)| &p5.output).collect();
        let fcs = conv2d_batch(&p5s, &self.fc, 1, 0)?;
        Ok(pooled
            .into_iter()
            .zip(fcs)
            .map(|((p4, p5), fc)| {
                let raw = [p4.output.data().to_vec(), p5.output.data().to_vec(), fc.into_data()];
                let emb = (|| {
                    let mut concat = Vec::with_capacity(self.cfg.embed_dim());
                    for part in &raw {
                        concat.extend(l2_normalize_slice(part)?);
                    }
                    let e = l2_normalize_slice(&concat)?;
                    Ok((e, concat))
                })();
                match emb {
                    Ok((e, concat)) => {
                        let cache = keep.then(|| RoiCache { p4, p5, raw, concat });
                        (Ok(e), cache)
                    }
                    Err(err) => (Err(err), None),
                }
            })
            .collect())
    }

    /// Embeds every region; an individual region may fail normalisation.
    ///
    /// With `threads > 1` regions are split into contiguous chunks scored on
    /// the current rayon pool; results do not depend on the split.
    pub fn embed_each(&self, feats: &Features, rois: &[BBox], threads: usize) -> Result<Vec<Result<Embedding>>> {
        if threads <= 1 || rois.len() < 2 {
            return Ok(self.embed_chunk(feats, rois, false)?.into_iter().map(|(e, _)| e).collect());
        }
        let chunk = rois.len().div_ceil(threads);
        let parts: Vec<_> = rois
            .par_chunks(chunk)
            .map(|c| self.embed_chunk(feats, c, false))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.into_iter().flatten().map(|(e, _)| e).collect())
    }

    /// Embeds every region of `image`, failing on the first degenerate one.
    pub fn embed(&self, image: &Tensor, rois: &[BBox]) -> Result<Vec<Embedding>> {
        let feats = self.features(image)?;
        self.embed_each(&feats, rois, 1)?.into_iter().collect()
    }

    /// Like [`Self::embed_each`] but keeps what [`Self::backward`] needs.
    pub fn embed_for_training(&self, feats: &Features, rois: &[BBox]) -> Result<Vec<Result<(Embedding, RoiCache)>>> {
        Ok(self
            .embed_chunk(feats, rois, true)?
            .into_iter()
            .map(|(e, c)| Ok((e?, c.expect("cache requested"))))
            .collect())
    }

    /// Back-propagates embedding gradients of one image's regions into
    /// parameter gradients, ordered as `convs` followed by `fc`.
    pub fn backward(
        &self,
        feats: &Features,
        acts: &Activations,
        caches: &[&RoiCache],
        grads: &[Vec<f64>],
    ) -> Result<Vec<ParamGrads>> {
        let dims = self.cfg.part_dims();
        let bins = self.cfg.roi_bins;
        let mut g4 = Tensor::zeros(feats.conv4.shape());
        let mut g5 = Tensor::zeros(feats.conv5.shape());
        let mut g_parts = Vec::with_capacity(caches.len());
        for (cache, g) in caches.iter().zip(grads) {
            let gc = l2_normalize_slice_backward(&cache.concat, g)?;
            let mut off = 0;
            let mut parts = Vec::with_capacity(3);
            for (raw, &d) in cache.raw.iter().zip(&dims) {
                parts.push(l2_normalize_slice_backward(raw, &gc[off..off + d])?);
                off += d;
            }
            g_parts.push(parts);
        }
        let p5s: Vec<&Tensor> = caches.iter().map(|c| &c.p5.output).collect();
        let gfc: Vec<Tensor> = g_parts
            .iter()
            .map(|p| Tensor::new(vec![self.cfg.fc_width, 1, 1], p[2].clone()))
            .collect::<Result<_>>()?;
        let gfc_refs: Vec<&Tensor> = gfc.iter().collect();
        let (gp5_fc, fc_grads) = if caches.is_empty() {
            (Vec::new(), ParamGrads::zeros_like(&self.fc))
        } else {
            conv2d_batch_backward(&p5s, &self.fc, 1, 0, &gfc_refs, true)?
        };
        let pooled_shape4 = [self.cfg.widths[3], bins, bins];
        let pooled_shape5 = [self.cfg.widths[4], bins, bins];
        for ((cache, parts), gfc_in) in caches.iter().zip(&g_parts).zip(gp5_fc) {
            let gp4 = Tensor::new(pooled_shape4.to_vec(), parts[0].clone())?;
            roi_pool_backward(&cache.p4, &gp4, &mut g4)?;
            let mut gp5 = Tensor::new(pooled_shape5.to_vec(), parts[1].clone())?;
            gp5.add_assign(&gfc_in)?;
            roi_pool_backward(&cache.p5, &gp5, &mut g5)?;
        }
        let mut out = self.backbone_backward(acts, g4, g5)?;
        out.push(fc_grads);
        Ok(out)
    }

    fn backbone_backward(&self, acts: &Activations, g4: Tensor, g5: Tensor) -> Result<Vec<ParamGrads>> {
        let ends = block_ends();
        let first_trainable = self.convs.iter().position(|l| !l.frozen);
        let mut grads: Vec<ParamGrads> = self.convs.iter().map(ParamGrads::zeros_like).collect();
        let Some(first) = first_trainable else {
            return Ok(grads);
        };
        if self.convs[first..].iter().any(|l| l.frozen) {
            return Err(Error::Config("only a leading run of layers can be frozen".into()));
        }
        let mut g = g5;
        let mut g4 = Some(g4);
        for li in (first..self.convs.len()).rev() {
            if li == ends[3] {
                g.add_assign(&g4.take().expect("conv4 gradient added once"))?;
            }
            if let Some(b) = ends[..POOLED_BLOCKS].iter().position(|&e| e == li) {
                g = max_pool2d_backward(&acts.pool_inputs[b], &g)?;
            }
            let gpre = relu_backward(&acts.pre_relu[li], &g)?;
            let (gin, pg) = conv2d_backward(&acts.conv_inputs[li], &self.convs[li], 1, 1, &gpre, li > first)?;
            grads[li] = pg;
            if let Some(gi) = gin {
                g = gi;
            }
        }
        Ok(grads)
    }

    pub fn layers(&self) -> Vec<&LayerParams> {
        self.convs.iter().chain(std::iter::once(&self.fc)).collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerParams> {
        self.convs.iter_mut().chain(std::iter::once(&mut self.fc)).collect()
    }

    pub fn save_to(&self, ck: &mut Checkpoint) {
        for (name, l) in layer_names().iter().zip(&self.convs) {
            ck.push(format!("siamese.{name}.weight"), l.weights.clone());
            ck.push(format!("siamese.{name}.bias"), l.bias.clone());
        }
        ck.push("siamese.fc.weight", self.fc.weights.clone());
        ck.push("siamese.fc.bias", self.fc.bias.clone());
    }

    /// Loads parameters shaped by `cfg`; mismatches name the parameter.
    pub fn load_from(cfg: SiameseConfig, ck: &Checkpoint) -> Result<Self> {
        let mut net = Self::zeros(cfg)?;
        for (name, l) in layer_names().iter().zip(net.convs.iter_mut()) {
            l.weights = ck.take(&format!("siamese.{name}.weight"), l.weights.shape())?;
            l.bias = ck.take(&format!("siamese.{name}.bias"), l.bias.shape())?;
        }
        net.fc.weights = ck.take("siamese.fc.weight", net.fc.weights.shape())?;
        net.fc.bias = ck.take("siamese.fc.bias", net.fc.bias.shape())?;
        Ok(net)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::gradcheck::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> SiameseConfig {
        SiameseConfig {
            input_size: 16,
            widths: vec![2, 3, 3, 4, 4],
            fc_width: 5,
            roi_bins: 2,
            ..SiameseConfig::default()
        }
    }

    fn image(rng: &mut ChaCha8Rng, s: usize) -> Tensor {
        Tensor::uniform(&[3, s, s], 0.0, 1.0, rng)
    }

    #[test]
    fn embeddings_are_unit_norm_and_dim_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = SiameseNet::new(tiny_config(), &mut rng).unwrap();
        let img = image(&mut rng, 16);
        let rois = [BBox::new(2.0, 2.0, 8.0, 9.0), BBox::new(0.0, 4.0, 16.0, 6.0), BBox::new(2.0, 2.0, 8.0, 9.0)];
        let e = net.embed(&img, &rois).unwrap();
        for v in &e {
            assert_eq!(v.len(), net.cfg.embed_dim());
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert_eq!(e[0], e[2]);
    }

    #[test]
    fn default_dims() {
        let cfg = SiameseConfig::default();
        assert_eq!(cfg.embed_dim(), 3136 + 3136 + 512);
        let bad = SiameseConfig { spatial_scale: 0.5, ..SiameseConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("spatial_scale"));
    }

    #[test]
    fn batched_equals_single_and_parallel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = SiameseNet::new(tiny_config(), &mut rng).unwrap();
        let img = image(&mut rng, 16);
        let rois: Vec<BBox> = (0..9)
            .map(|i| BBox::new(i as f64, (i % 4) as f64, 6.0 + i as f64 * 0.5, 7.0))
            .collect();
        let feats = net.features(&img).unwrap();
        let batch: Vec<_> = net.embed_each(&feats, &rois, 1).unwrap().into_iter().map(|e| e.unwrap()).collect();
        let par: Vec<_> = net.embed_each(&feats, &rois, 3).unwrap().into_iter().map(|e| e.unwrap()).collect();
        for (i, r) in rois.iter().enumerate() {
            let single = net.embed_each(&feats, std::slice::from_ref(r), 1).unwrap().remove(0).unwrap();
            for ((a, b), c) in batch[i].iter().zip(&single).zip(&par[i]) {
                assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resampled_input_scales_rois() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = SiameseNet::new(tiny_config(), &mut rng).unwrap();
        let small = image(&mut rng, 16);
        let big = extract_patch(&small, &BBox::new(0.0, 0.0, 16.0, 16.0), 32, 32).unwrap();
        let roi = BBox::new(2.0, 2.0, 8.0, 8.0);
        let a = net.embed(&small, &[roi]).unwrap();
        let b = net.embed(&big, &[roi.scale_coords(2.0, 2.0)]).unwrap();
        assert!(a[0].iter().zip(&b[0]).all(|(x, y)| (x - y).abs() < 0.2));
    }

    #[test]
    fn outside_roi_fails_normalisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = SiameseNet::new(tiny_config(), &mut rng).unwrap();
        let img = image(&mut rng, 16);
        let r = net.embed(&img, &[BBox::new(100.0, 100.0, 5.0, 5.0)]);
        assert!(matches!(r, Err(Error::Normalization(_))));
    }

    /// Full analytic gradient of a random projection of two embeddings
    /// against central differences on a few parameters of every layer.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SiameseConfig { frozen_blocks: 0, ..tiny_config() };
        let net = SiameseNet::new(cfg, &mut rng).unwrap();
        let img = image(&mut rng, 16);
        let rois = [BBox::new(1.0, 2.0, 10.0, 9.0), BBox::new(4.0, 3.0, 11.0, 12.0)];
        let dim = net.cfg.embed_dim();
        let proj: Vec<Vec<f64>> = (0..2).map(|_| Tensor::randn(&[dim], 1.0, &mut rng).into_data()).collect();
        let objective = |n: &SiameseNet| -> f64 {
            n.embed(&img, &rois)
                .unwrap()
                .iter()
                .zip(&proj)
                .map(|(e, p)| e.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let (feats, acts) = net.features_for_training(&img).unwrap();
        let emb: Vec<_> = net.embed_for_training(&feats, &rois).unwrap().into_iter().map(|e| e.unwrap()).collect();
        let caches: Vec<&RoiCache> = emb.iter().map(|(_, c)| c).collect();
        let grads = net.backward(&feats, &acts, &caches, &proj).unwrap();

        let eps = 1e-5;
        for li in 0..net.convs.len() + 1 {
            let n_w = net.layers()[li].weights.len();
            let idx: Vec<usize> = (0..6).map(|_| rng.gen_range(0..n_w)).collect();
            let mut ana = Vec::new();
            let mut num = Vec::new();
            for &i in &idx {
                let mut plus = net.clone();
                plus.layers_mut()[li].weights.data_mut()[i] += eps;
                let mut minus = net.clone();
                minus.layers_mut()[li].weights.data_mut()[i] -= eps;
                num.push((objective(&plus) - objective(&minus)) / (2.0 * eps));
                ana.push(grads[li].weights.data()[i]);
            }
            let mut plus = net.clone();
            plus.layers_mut()[li].bias.data_mut()[0] += eps;
            let mut minus = net.clone();
            minus.layers_mut()[li].bias.data_mut()[0] -= eps;
            num.push((objective(&plus) - objective(&minus)) / (2.0 * eps));
            ana.push(grads[li].bias.data()[0]);
            let err = relative_error(&Tensor::from_vec(ana), &Tensor::from_vec(num));
            assert!(err < 1e-4, "layer {li}: {err}");
        }
    }

    #[test]
    fn frozen_block_gets_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = SiameseNet::new(tiny_config(), &mut rng).unwrap();
        let img = image(&mut rng, 16);
        let (feats, acts) = net.features_for_training(&img).unwrap();
        let emb = net.embed_for_training(&feats, &[BBox::new(1.0, 1.0, 9.0, 9.0)]).unwrap().remove(0).unwrap();
        let g = vec![Tensor::randn(&[net.cfg.embed_dim()], 1.0, &mut rng).into_data()];
        let grads = net.backward(&feats, &acts, &[&emb.1], &g).unwrap();
        assert_eq!(grads[0].weights.norm(), 0.0);
        assert!(grads[2].weights.norm() > 0.0);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = SiameseNet::new(tiny_config(), &mut rng).unwrap();
        let mut ck = Checkpoint::new();
        net.save_to(&mut ck);
        let back = SiameseNet::load_from(tiny_config(), &ck).unwrap();
        assert_eq!(back, net);
        let other = SiameseConfig { fc_width: 6, ..tiny_config() };
        let err = SiameseNet::load_from(other, &ck).unwrap_err().to_string();
        assert!(err.contains("siamese.fc.weight"), "{err}");
    }
}
