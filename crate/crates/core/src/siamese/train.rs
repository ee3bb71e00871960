use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::{RoiCache, SiameseNet};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::nn::{contrastive_loss, sgd_step, ParamGrads, SgdState};
use crate::synth::Sequence;

pub const PAIR_POS_IOU: f64 = 0.7;
pub const PAIR_NEG_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiameseTrainConfig {
    /// Passes over the pair dataset.
    pub epochs: usize,
    pub groups_per_sequence: usize,
    pub candidates_per_group: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SiameseTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            groups_per_sequence: 12,
            candidates_per_group: 16,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

impl SiameseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("siamese_train.{m}")));
        if self.groups_per_sequence == 0 || self.candidates_per_group == 0 {
            return bad("groups_per_sequence and candidates_per_group must be positive");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("need lr > 0, momentum in [0, 1) and weight_decay >= 0");
        }
        Ok(())
    }
}

/// One anchor (ground truth in `anchor_frame`) paired with labelled boxes
/// from another frame of the same sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGroup {
    pub sequence: usize,
    pub anchor_frame: usize,
    pub anchor: BBox,
    pub frame: usize,
    pub candidates: Vec<BBox>,
    /// `true` for a matching pair.
    pub labels: Vec<bool>,
}

impl PairGroup {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

fn draw_box<R: Rng>(gt: &BBox, wide: bool, img: (f64, f64), rng: &mut R) -> BBox {
    let v = 0.5 * (gt.w + gt.h);
    let (cx, cy) = gt.center();
    let (sd, scale) = if wide { (1.0 * v, 1.3f64.powf(rng.gen_range(-1.0..1.0))) } else {
        let z: f64 = rng.sample(StandardNormal);
        (0.1 * v, 1.05f64.powf(z))
    };
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    let x = (cx + sd * zx).clamp(0.0, img.0);
    let y = (cy + sd * zy).clamp(0.0, img.1);
    BBox::from_center(x, y, gt.w * scale, gt.h * scale)
}

/// Samples anchor/candidate groups from every sequence.
///
/// Candidates come from a different frame than the anchor and are labelled
/// by IoU with that frame's ground truth: matching above 0.7, non-matching
/// below 0.5, discarded in between.
pub fn build_training_pairs(
    corpus: &[Sequence],
    groups_per_sequence: usize,
    candidates_per_group: usize,
    seed: u64,
) -> Vec<PairGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    for (si, seq) in corpus.iter().enumerate() {
        if seq.len() < 2 || seq.gt.len() != seq.len() {
            log::warn!("skipping sequence {} with {} frames", seq.name, seq.len());
            continue;
        }
        let (_, h, w) = seq.frames[0].chw().expect("frames are CHW");
        for _ in 0..groups_per_sequence {
            let a = rng.gen_range(0..seq.len());
            let mut b = rng.gen_range(0..seq.len() - 1);
            if b >= a {
                b += 1;
            }
            let gt = seq.gt[b];
            let mut candidates = Vec::with_capacity(candidates_per_group);
            let mut labels = Vec::with_capacity(candidates_per_group);
            let mut tries = 0;
            while candidates.len() < candidates_per_group && tries < 50 * candidates_per_group.max(1) {
                // a quarter of the draws are tight jitters, mostly positives
                let wide = tries % 4 != 0;
                tries += 1;
                let c = draw_box(&gt, wide, (w as f64, h as f64), &mut rng);
                let o = iou(&c, &gt);
                if o > PAIR_POS_IOU {
                    labels.push(true);
                } else if o < PAIR_NEG_IOU {
                    labels.push(false);
                } else {
                    continue;
                }
                candidates.push(c);
            }
            groups.push(PairGroup {
                sequence: si,
                anchor_frame: a,
                anchor: seq.gt[a],
                frame: b,
                candidates,
                labels,
            });
        }
    }
    groups
}

/// Loss and parameter gradients of one group, averaged over its pairs.
fn group_step(net: &SiameseNet, corpus: &[Sequence], g: &PairGroup, grads: bool) -> Result<(f64, Option<Vec<ParamGrads>>)> {
    let seq = &corpus[g.sequence];
    let (fa, aa) = net.features_for_training(&seq.frames[g.anchor_frame])?;
    let (fb, ab) = net.features_for_training(&seq.frames[g.frame])?;
    // Regions whose pooled features are entirely zero cannot be normalised
    // and are left out of the step.
    let Ok(anchor) = net.embed_for_training(&fa, std::slice::from_ref(&g.anchor))?.remove(0) else {
        return Ok((0.0, grads.then(|| net.layers().into_iter().map(ParamGrads::zeros_like).collect())));
    };
    let (cands, labels): (Vec<_>, Vec<bool>) = net
        .embed_for_training(&fb, &g.candidates)?
        .into_iter()
        .zip(&g.labels)
        .filter_map(|(e, &l)| e.ok().map(|e| (e, l)))
        .unzip();
    let n = cands.len().max(1) as f64;
    let mut loss = 0.0;
    let mut ga = vec![0.0; net.cfg.embed_dim()];
    let mut gb = Vec::with_capacity(cands.len());
    for ((e, _), &same) in cands.iter().zip(&labels) {
        let c = contrastive_loss(&anchor.0, e, same, net.cfg.margin)?;
        loss += c.loss / n;
        ga.iter_mut().zip(&c.grad_a).for_each(|(a, d)| *a += d / n);
        gb.push(c.grad_b.into_iter().map(|d| d / n).collect::<Vec<_>>());
    }
    if !grads {
        return Ok((loss, None));
    }
    let mut total = net.backward(&fa, &aa, &[&anchor.1], &[ga])?;
    let cache_b: Vec<&RoiCache> = cands.iter().map(|(_, c)| c).collect();
    for (t, p) in total.iter_mut().zip(net.backward(&fb, &ab, &cache_b, &gb)?) {
        t.accumulate(&p)?;
    }
    Ok((loss, Some(total)))
}

/// Mean contrastive loss over all groups, without updating.
pub fn pair_loss(net: &SiameseNet, corpus: &[Sequence], groups: &[PairGroup]) -> Result<f64> {
    let mut total = 0.0;
    for g in groups {
        total += group_step(net, corpus, g, false)?.0;
    }
    Ok(total / groups.len().max(1) as f64)
}

/// Trains `net` with momentum SGD, one step per group. Returns the mean
/// loss of each epoch.
pub fn train_siamese(
    net: &mut SiameseNet,
    corpus: &[Sequence],
    groups: &[PairGroup],
    cfg: &SiameseTrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if groups.iter().all(|g| g.is_empty()) {
        return Err(Error::Config("siamese training needs at least one labelled pair".into()));
    }
    let mut sgd = SgdState::new(&net.layers(), cfg.lr, cfg.momentum, cfg.weight_decay, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &gi in &order {
            let (loss, grads) = group_step(net, corpus, &groups[gi], true)?;
            let grads = grads.expect("gradients requested");
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Divergence(format!("siamese loss {loss} in epoch {epoch}")));
            }
            sum += loss;
            sgd_step(&mut net.layers_mut(), &grads, &mut sgd)?;
        }
        let mean = sum / groups.len() as f64;
        log::info!("siamese epoch {epoch}: loss {mean:.5}");
        trajectory.push(mean);
    }
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siamese::net::tests::tiny_config;
    use crate::synth::{generate_sequence, MotionProfile, SequenceSpec};

    fn toy_corpus() -> Vec<Sequence> {
        (0..2)
            .map(|i| {
                let spec = SequenceSpec {
                    length: 6,
                    width: 32,
                    height: 32,
                    target_w: 10.0,
                    target_h: 10.0,
                    texture_seed: 40 + i,
                    motion: MotionProfile { walk_sigma: 1.0, ..MotionProfile::default() },
                    ..SequenceSpec::default()
                };
                generate_sequence(&spec, 90 + i).unwrap()
            })
            .collect()
    }

    /// Pixel-counting overlap on a fine grid, independent of `iou`.
    fn grid_iou(a: &BBox, b: &BBox) -> f64 {
        let step = 0.05;
        let (mut inter, mut uni) = (0u64, 0u64);
        let (x0, x1) = (a.x.min(b.x), a.right().max(b.right()));
        let (y0, y1) = (a.y.min(b.y), a.bottom().max(b.bottom()));
        let mut y = y0 + step / 2.0;
        while y < y1 {
            let mut x = x0 + step / 2.0;
            while x < x1 {
                let ia = x >= a.x && x < a.right() && y >= a.y && y < a.bottom();
                let ib = x >= b.x && x < b.right() && y >= b.y && y < b.bottom();
                inter += (ia && ib) as u64;
                uni += (ia || ib) as u64;
                x += step;
            }
            y += step;
        }
        inter as f64 / uni.max(1) as f64
    }

    #[test]
    fn labels_agree_with_independent_overlap() {
        let corpus = toy_corpus();
        let groups = build_training_pairs(&corpus, 3, 10, 5);
        assert_eq!(groups.len(), 6);
        for g in &groups {
            assert_ne!(g.anchor_frame, g.frame);
            assert_eq!(g.anchor, corpus[g.sequence].gt[g.anchor_frame]);
            let gt = corpus[g.sequence].gt[g.frame];
            for (c, &l) in g.candidates.iter().zip(&g.labels) {
                let o = grid_iou(c, &gt);
                // the grid estimate is accurate to about 1e-2
                if l {
                    assert!(o > PAIR_POS_IOU - 0.02, "{o}");
                } else {
                    assert!(o < PAIR_NEG_IOU + 0.02, "{o}");
                }
            }
        }
        assert_eq!(groups, build_training_pairs(&corpus, 3, 10, 5));
    }

    #[test]
    fn exact_gt_is_positive_disjoint_is_negative() {
        let gt = BBox::new(5.0, 5.0, 10.0, 10.0);
        assert!(iou(&gt, &gt) > PAIR_POS_IOU);
        assert!(iou(&BBox::new(40.0, 40.0, 10.0, 10.0), &gt) < PAIR_NEG_IOU);
    }

    #[test]
    fn short_sequences_are_skipped() {
        let mut corpus = toy_corpus();
        corpus[0].frames.truncate(1);
        corpus[0].gt.truncate(1);
        let groups = build_training_pairs(&corpus, 2, 4, 1);
        assert!(groups.iter().all(|g| g.sequence == 1));
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let corpus = toy_corpus();
        let groups = build_training_pairs(&corpus, 2, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = SiameseNet::new(tiny_config(), &mut rng).unwrap();
        let before = net.clone();
        let cfg = SiameseTrainConfig { epochs: 0, ..SiameseTrainConfig::default() };
        assert!(train_siamese(&mut net, &corpus, &groups, &cfg, 1).unwrap().is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn training_halves_loss_and_keeps_frozen_block() {
        let corpus = toy_corpus();
        let groups = build_training_pairs(&corpus, 2, 8, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = crate::siamese::SiameseConfig { input_size: 32, widths: vec![4, 4, 8, 8, 8], fc_width: 16, ..tiny_config() };
        let mut net = SiameseNet::new(cfg, &mut rng).unwrap();
        let frozen = net.convs[..2].to_vec();
        let before = pair_loss(&net, &corpus, &groups).unwrap();
        let tcfg = SiameseTrainConfig { epochs: 30, lr: 0.01, ..SiameseTrainConfig::default() };
        let traj = train_siamese(&mut net, &corpus, &groups, &tcfg, 1).unwrap();
        assert_eq!(traj.len(), 30);
        let after = pair_loss(&net, &corpus, &groups).unwrap();
        assert!(after < 0.5 * before, "loss {before} -> {after}");
        assert_eq!(&net.convs[..2], &frozen[..]);
    }
}
