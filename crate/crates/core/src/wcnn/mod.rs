//! Sequence-specific weighting head over Siamese embeddings and score fusion.

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxState;
use crate::nn::linalg::gemm;
use crate::nn::{
    conv2d, conv2d_backward, relu, relu_backward, sgd_step, weighted_softmax_loss, LayerParams,
    ParamGrads, SgdState,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WcnnConfig {
    pub hidden: usize,
    pub beta: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_pos: usize,
    pub batch_neg: usize,
    /// Negatives scored per step when mining the hardest `batch_neg`.
    pub neg_pool: usize,
    pub lr_multipliers: [f64; 2],
    pub init_std: f64,
    pub init_epochs: usize,
    pub update_epochs: usize,
}

impl Default for WcnnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            beta: 0.2,
            lr: 0.15,
            momentum: 0.005,
            weight_decay: 0.0005,
            batch_pos: 32,
            batch_neg: 96,
            neg_pool: 256,
            lr_multipliers: [3.0, 30.0],
            init_std: 0.01,
            init_epochs: 30,
            update_epochs: 10,
        }
    }
}

impl WcnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("wcnn.{m}")));
        if self.hidden == 0 || self.batch_pos == 0 || self.batch_neg == 0 {
            return bad("hidden, batch_pos and batch_neg must be positive");
        }
        if self.neg_pool < self.batch_neg {
            return bad("neg_pool must be at least batch_neg");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.lr < 0.0 || self.weight_decay < 0.0 {
            return bad("need lr >= 0, weight_decay >= 0, momentum in [0, 1)");
        }
        Ok(())
    }
}

/// Two 1x1 convolutions over an embedding viewed as a `[dim, 1, 1]` map.
#[derive(Debug, Clone, PartialEq)]
pub struct Wcnn {
    pub l1: LayerParams,
    pub l2: LayerParams,
}

/// Embeddings gathered row-wise into an `n x dim` matrix.
fn gather(embs: &[&[f64]]) -> Result<(Vec<f64>, usize, usize)> {
    let n = embs.len();
    let d = embs.first().map_or(0, |e| e.len());
    if n == 0 || d == 0 || embs.iter().any(|e| e.len() != d) {
        return Err(Error::Shape {
            op: "wcnn",
            detail: "need a non-empty batch of equal-length embeddings".into(),
        });
    }
    let mut x = Vec::with_capacity(n * d);
    for e in embs {
        x.extend_from_slice(e);
    }
    Ok((x, n, d))
}

impl Wcnn {
    pub fn new<R: Rng + ?Sized>(cfg: &WcnnConfig, dim: usize, rng: &mut R) -> Self {
        Self {
            l1: LayerParams::gaussian(cfg.hidden, dim, 1, cfg.init_std, rng).with_lr_multiplier(cfg.lr_multipliers[0]),
            l2: LayerParams::gaussian(2, cfg.hidden, 1, cfg.init_std, rng).with_lr_multiplier(cfg.lr_multipliers[1]),
        }
    }

    pub fn sgd(&self, cfg: &WcnnConfig) -> Result<SgdState> {
        SgdState::new(&[&self.l1, &self.l2], cfg.lr, cfg.momentum, cfg.weight_decay, cfg.batch_pos + cfg.batch_neg)
    }

    /// First 1x1 convolution applied to the gathered rows `x`: a `[hidden, n, 1]`
    /// map, computed as one product against the transposed embedding matrix.
    fn first_layer(&self, x: &[f64], n: usize, d: usize) -> Result<Tensor> {
        let hidden = self.l1.out_channels();
        if self.l1.in_channels() != d {
            return Err(Error::Shape {
                op: "wcnn",
                detail: format!("embedding has {d} values, head expects {}", self.l1.in_channels()),
            });
        }
        let mut out = vec![0.0; hidden * n];
        for (o, &b) in self.l1.bias.data().iter().enumerate() {
            out[o * n..(o + 1) * n].fill(b);
        }
        gemm(hidden, d, n, 1.0, self.l1.weights.data(), (d, 1), x, (1, d), 1.0, &mut out, (n, 1));
        Tensor::new(vec![hidden, n, 1], out)
    }

    /// `[2, n, 1]` logits.
    pub fn logits(&self, embs: &[&[f64]]) -> Result<Tensor> {
        let (x, n, d) = gather(embs)?;
        let h = relu(&self.first_layer(&x, n, d)?);
        conv2d(&h, &self.l2, 1, 0)
    }

    /// Positive-class raw logit of every embedding.
    pub fn scores(&self, embs: &[&[f64]]) -> Result<Vec<f64>> {
        if embs.is_empty() {
            return Ok(Vec::new());
        }
        let n = embs.len();
        Ok(self.logits(embs)?.data()[n..].to_vec())
    }

    /// Mean softmax loss of a labelled batch (`true` = target) and its gradients.
    pub fn loss_and_grads(&self, embs: &[&[f64]], labels: &[bool]) -> Result<(f64, [ParamGrads; 2])> {
        let (x, n, d) = gather(embs)?;
        let pre = self.first_layer(&x, n, d)?;
        let h = relu(&pre);
        let logits = conv2d(&h, &self.l2, 1, 0)?;
        let y: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
        let (loss, g) = weighted_softmax_loss(&logits, &y, &[1.0, 1.0])?;
        let (gh, g2) = conv2d_backward(&h, &self.l2, 1, 0, &g, true)?;
        let gpre = relu_backward(&pre, &gh.expect("input gradient requested"))?;
        let hidden = self.l1.out_channels();
        let mut gw = vec![0.0; hidden * d];
        gemm(hidden, n, d, 1.0, gpre.data(), (n, 1), &x, (d, 1), 0.0, &mut gw, (d, 1));
        let gb: Vec<f64> = gpre.data().chunks(n).map(|r| r.iter().sum()).collect();
        let g1 = ParamGrads {
            weights: Tensor::new(vec![hidden, d, 1, 1], gw)?,
            bias: Tensor::new(vec![hidden], gb)?,
        };
        Ok((loss, [g1, g2]))
    }
}

pub fn wcnn_score(embedding: &[f64], net: &Wcnn) -> Result<f64> {
    Ok(net.scores(&[embedding])?[0])
}

/// `exp(beta w) * sim`.
pub fn combine_scores(sim: f64, w: f64, beta: f64) -> f64 {
    (beta * w).exp() * sim
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub state: BoxState,
    pub embedding: Vec<f64>,
    /// Buffered similarity.
    pub sim: f64,
    /// Positive-class logit of the weighting head.
    pub weight: f64,
    pub fused: f64,
}

/// Indices sorted by descending `key`, ties kept in index order.
fn ranked(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    idx
}

/// Averages the states and fused scores of the five best candidates.
pub fn estimate_state(candidates: &[ScoredCandidate]) -> Result<(f64, BoxState)> {
    if candidates.is_empty() {
        return Err(Error::LostTarget("no scored candidates".into()));
    }
    let fused: Vec<f64> = candidates.iter().map(|c| c.fused).collect();
    let top: Vec<&ScoredCandidate> = ranked(&fused).into_iter().take(5).map(|i| &candidates[i]).collect();
    let k = top.len() as f64;
    let mean = |f: fn(&ScoredCandidate) -> f64| top.iter().map(|c| f(c)).sum::<f64>() / k;
    let state = BoxState {
        cx: mean(|c| c.state.cx),
        cy: mean(|c| c.state.cy),
        s: mean(|c| c.state.s),
        ..top[0].state
    };
    Ok((mean(|c| c.fused), state))
}

/// Indices of the `k` negatives with the highest positive-class logit.
pub fn mine_hard_negatives(negatives: &[&[f64]], k: usize, net: &Wcnn) -> Result<Vec<usize>> {
    if k >= negatives.len() {
        return Ok((0..negatives.len()).collect());
    }
    let s = net.scores(negatives)?;
    Ok(ranked(&s).into_iter().take(k).collect())
}

/// Minibatch training: each step takes `batch_pos` random positives and the
/// `batch_neg` hardest of a random pool of negatives. Returns per-step losses.
pub fn train_wcnn<R: Rng + ?Sized>(
    net: &mut Wcnn,
    positives: &[&[f64]],
    negatives: &[&[f64]],
    cfg: &WcnnConfig,
    iterations: usize,
    sgd: &mut SgdState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if positives.is_empty() {
        log::warn!("weighting head update skipped: no positive samples");
        return Ok(Vec::new());
    }
    let mut losses = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let mut batch: Vec<&[f64]> = sample(rng, positives.len(), cfg.batch_pos.min(positives.len()))
            .iter()
            .map(|i| positives[i])
            .collect();
        let n_pos = batch.len();
        if !negatives.is_empty() {
            let pool: Vec<&[f64]> = sample(rng, negatives.len(), cfg.neg_pool.min(negatives.len()))
                .iter()
                .map(|i| negatives[i])
                .collect();
            for i in mine_hard_negatives(&pool, cfg.batch_neg, net)? {
                batch.push(pool[i]);
            }
        }
        let labels: Vec<bool> = (0..batch.len()).map(|i| i < n_pos).collect();
        let (loss, grads) = net.loss_and_grads(&batch, &labels)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Divergence(format!("weighting head loss {loss} at iteration {it}")));
        }
        sgd_step(&mut [&mut net.l1, &mut net.l2], &grads, sgd)?;
        losses.push(loss);
    }
    Ok(losses)
}

pub const SCORES_HEADER: &str = "frame,candidate,sim,w,fused";

/// Appends one row per candidate.
pub fn write_scores_csv<W: Write>(out: &mut W, frame: usize, candidates: &[ScoredCandidate]) -> Result<()> {
    for (i, c) in candidates.iter().enumerate() {
        writeln!(out, "{frame},{i},{},{},{}", c.sim, c.weight, c.fused)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_diff_grad, relative_error};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v = Tensor::randn(&[d], 1.0, rng);
        let n = v.norm();
        v.data().iter().map(|x| x / n).collect()
    }

    fn cand(cx: f64, cy: f64, s: f64, fused: f64) -> ScoredCandidate {
        ScoredCandidate {
            state: BoxState { cx, cy, s, base_w: 10.0, base_h: 20.0 },
            embedding: Vec::new(),
            sim: fused,
            weight: 0.0,
            fused,
        }
    }

    #[test]
    fn first_layer_matches_convolution_over_stacked_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = WcnnConfig { hidden: 5, init_std: 0.3, ..WcnnConfig::default() };
        let net = Wcnn::new(&cfg, 9, &mut rng);
        let embs: Vec<Vec<f64>> = (0..7).map(|_| unit(&mut rng, 9)).collect();
        let refs: Vec<&[f64]> = embs.iter().map(|e| e.as_slice()).collect();
        let mut stacked = Tensor::zeros(&[9, 7, 1]);
        for (j, e) in embs.iter().enumerate() {
            for (i, v) in e.iter().enumerate() {
                stacked.set3(i, j, 0, *v);
            }
        }
        let (x, n, d) = gather(&refs).unwrap();
        let fast = net.first_layer(&x, n, d).unwrap();
        let slow = conv2d(&stacked, &net.l1, 1, 0).unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-12);
        let labels: Vec<bool> = (0..7).map(|i| i % 2 == 0).collect();
        let (_, grads) = net.loss_and_grads(&refs, &labels).unwrap();
        let h = relu(&slow);
        let logits = conv2d(&h, &net.l2, 1, 0).unwrap();
        let y: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
        let (_, g) = weighted_softmax_loss(&logits, &y, &[1.0, 1.0]).unwrap();
        let (gh, _) = conv2d_backward(&h, &net.l2, 1, 0, &g, true).unwrap();
        let gpre = relu_backward(&slow, &gh.unwrap()).unwrap();
        let (_, g1) = conv2d_backward(&stacked, &net.l1, 1, 0, &gpre, false).unwrap();
        assert!(grads[0].weights.max_abs_diff(&g1.weights) < 1e-12);
        assert!(grads[0].bias.max_abs_diff(&g1.bias) < 1e-12);
    }

    #[test]
    fn zero_parameters_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = WcnnConfig { hidden: 4, ..WcnnConfig::default() };
        let mut net = Wcnn::new(&cfg, 8, &mut rng);
        for l in [&mut net.l1, &mut net.l2] {
            l.weights = Tensor::zeros(l.weights.shape());
        }
        let e = unit(&mut rng, 8);
        assert_eq!(wcnn_score(&e, &net).unwrap(), 0.0);
    }

    #[test]
    fn final_layer_scaling_scales_logit_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = WcnnConfig { hidden: 5, init_std: 0.5, ..WcnnConfig::default() };
        let net = Wcnn::new(&cfg, 8, &mut rng);
        let e = unit(&mut rng, 8);
        let diff = |n: &Wcnn| {
            let l = n.logits(&[&e]).unwrap();
            l.data()[1] - l.data()[0]
        };
        let mut scaled = net.clone();
        scaled.l2.weights.scale(3.0);
        assert!((diff(&scaled) - 3.0 * diff(&net)).abs() < 1e-12);
    }

    #[test]
    fn batched_equals_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = WcnnConfig { hidden: 7, init_std: 0.3, ..WcnnConfig::default() };
        let net = Wcnn::new(&cfg, 12, &mut rng);
        let embs: Vec<Vec<f64>> = (0..10).map(|_| unit(&mut rng, 12)).collect();
        let refs: Vec<&[f64]> = embs.iter().map(|e| e.as_slice()).collect();
        let batch = net.scores(&refs).unwrap();
        for (e, b) in embs.iter().zip(&batch) {
            assert!((wcnn_score(e, &net).unwrap() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_cases() {
        assert_eq!(combine_scores(0.7, 123.0, 0.0), 0.7);
        assert_eq!(combine_scores(-0.3, 0.0, 0.2), -0.3);
        assert!((combine_scores(0.9, 3.0, 0.2) - 1.64).abs() < 1e-4);
        assert!((combine_scores(0.9, 3.0, 0.2) - 0.9 * 0.6f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn state_estimate_cases() {
        let one = [cand(3.0, 4.0, 1.1, 0.5)];
        let (s, st) = estimate_state(&one).unwrap();
        assert_eq!((s, st), (0.5, one[0].state));
        let five: Vec<_> = (0..5).map(|_| cand(1.0, 2.0, 0.9, 0.3)).collect();
        let (s, st) = estimate_state(&five).unwrap();
        assert!((s - 0.3).abs() < 1e-15 && (st.cx - 1.0).abs() < 1e-15 && (st.s - 0.9).abs() < 1e-15);
        assert!(matches!(estimate_state(&[]), Err(Error::LostTarget(_))));
    }

    #[test]
    fn eight_candidate_fixture() {
        let fused = [0.2, 0.9, 0.5, 0.9, 0.1, 0.7, 0.3, 0.6];
        let cands: Vec<_> = fused
            .iter()
            .enumerate()
            .map(|(i, &f)| cand(i as f64 * 10.0, 100.0 - i as f64, 1.0 + i as f64 * 0.1, f))
            .collect();
        // hand-sorted top five: indices 1, 3, 5, 7, 2
        let (s, st) = estimate_state(&cands).unwrap();
        assert!((s - (0.9 + 0.9 + 0.7 + 0.6 + 0.5) / 5.0).abs() < 1e-12);
        assert!((st.cx - (10.0 + 30.0 + 50.0 + 70.0 + 20.0) / 5.0).abs() < 1e-12);
        assert!((st.cy - (99.0 + 97.0 + 95.0 + 93.0 + 98.0) / 5.0).abs() < 1e-12);
        assert!((st.s - (1.1 + 1.3 + 1.5 + 1.7 + 1.2) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn mining_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = WcnnConfig { hidden: 6, init_std: 0.3, ..WcnnConfig::default() };
        let net = Wcnn::new(&cfg, 10, &mut rng);
        let negs: Vec<Vec<f64>> = (0..200).map(|_| unit(&mut rng, 10)).collect();
        let refs: Vec<&[f64]> = negs.iter().map(|e| e.as_slice()).collect();
        assert_eq!(mine_hard_negatives(&refs, 200, &net).unwrap(), (0..200).collect::<Vec<_>>());
        // full-sort oracle
        let s = net.scores(&refs).unwrap();
        let mut pairs: Vec<(f64, usize)> = s.iter().cloned().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = pairs.iter().take(96).map(|p| p.1).collect();
        assert_eq!(mine_hard_negatives(&refs, 96, &net).unwrap(), want);
        let mut zero = net.clone();
        zero.l2.weights = Tensor::zeros(zero.l2.weights.shape());
        assert_eq!(mine_hard_negatives(&refs, 7, &zero).unwrap(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
            let cfg = WcnnConfig { hidden: 4, init_std: 0.5, ..WcnnConfig::default() };
            let mut net = Wcnn::new(&cfg, 6, &mut rng);
            net.l1.bias = Tensor::randn(&[4], 0.2, &mut rng);
            let embs: Vec<Vec<f64>> = (0..5).map(|_| unit(&mut rng, 6)).collect();
            let refs: Vec<&[f64]> = embs.iter().map(|e| e.as_slice()).collect();
            let labels = [true, false, true, false, false];
            let (_, g) = net.loss_and_grads(&refs, &labels).unwrap();
            let w1 = finite_diff_grad(
                |p| {
                    let mut m = net.clone();
                    m.l1.weights = p.clone();
                    m.loss_and_grads(&refs, &labels).unwrap().0
                },
                &net.l1.weights,
                1e-5,
            );
            let w2 = finite_diff_grad(
                |p| {
                    let mut m = net.clone();
                    m.l2.weights = p.clone();
                    m.loss_and_grads(&refs, &labels).unwrap().0
                },
                &net.l2.weights,
                1e-5,
            );
            let b1 = finite_diff_grad(
                |p| {
                    let mut m = net.clone();
                    m.l1.bias = p.clone();
                    m.loss_and_grads(&refs, &labels).unwrap().0
                },
                &net.l1.bias,
                1e-5,
            );
            assert!(relative_error(&g[0].weights, &w1) < 1e-4);
            assert!(relative_error(&g[1].weights, &w2) < 1e-4);
            assert!(relative_error(&g[0].bias, &b1) < 1e-4);
        }
    }

    #[test]
    fn training_separates_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = WcnnConfig::default();
        let d = 32;
        let center = unit(&mut rng, d);
        let pos: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let n = unit(&mut rng, d);
                let v: Vec<f64> = center.iter().zip(&n).map(|(c, e)| c + 0.3 * e).collect();
                let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        let neg: Vec<Vec<f64>> = (0..500).map(|_| unit(&mut rng, d)).collect();
        let pr: Vec<&[f64]> = pos.iter().map(|e| e.as_slice()).collect();
        let nr: Vec<&[f64]> = neg.iter().map(|e| e.as_slice()).collect();
        let mut net = Wcnn::new(&cfg, d, &mut rng);
        let before = net.clone();
        let mut sgd = net.sgd(&cfg).unwrap();
        train_wcnn(&mut net, &pr, &nr, &cfg, 0, &mut sgd, &mut rng).unwrap();
        assert_eq!(net, before);
        train_wcnn(&mut net, &pr, &nr, &cfg, 30, &mut sgd, &mut rng).unwrap();
        let mp = net.scores(&pr).unwrap().iter().sum::<f64>() / 100.0;
        let mn = net.scores(&nr).unwrap().iter().sum::<f64>() / 500.0;
        assert!(mp > mn, "{mp} vs {mn}");
    }

    #[test]
    fn no_positives_is_a_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = WcnnConfig::default();
        let mut net = Wcnn::new(&cfg, 4, &mut rng);
        let before = net.clone();
        let mut sgd = net.sgd(&cfg).unwrap();
        let n = [0.5, 0.5, 0.5, 0.5];
        assert!(train_wcnn(&mut net, &[], &[&n], &cfg, 5, &mut sgd, &mut rng).unwrap().is_empty());
        assert_eq!(net, before);
    }

    proptest! {
        #[test]
        fn fusion_monotone_and_sign_preserving(sim in -1.0f64..1.0, w in -10.0f64..10.0, dw in 0.001f64..5.0, beta in 0.0f64..1.0) {
            let a = combine_scores(sim, w, beta);
            prop_assert_eq!(a.signum(), sim.signum());
            if sim > 0.0 && beta > 0.0 {
                prop_assert!(combine_scores(sim, w + dw, beta) > a);
            }
        }

        #[test]
        fn top5_invariant_under_weight_shift(
            sims in prop::collection::vec(0.01f64..1.0, 1..30),
            ws in prop::collection::vec(-3.0f64..3.0, 30),
            c in 0.0f64..4.0,
        ) {
            let build = |shift: f64| -> Vec<ScoredCandidate> {
                sims.iter().zip(&ws).enumerate().map(|(i, (&s, &w))| {
                    let mut k = cand(i as f64, 0.0, 1.0, combine_scores(s, w + shift, 0.2));
                    k.sim = s;
                    k
                }).collect()
            };
            let top = |v: &[ScoredCandidate]| {
                let f: Vec<f64> = v.iter().map(|c| c.fused).collect();
                let mut t: Vec<usize> = ranked(&f).into_iter().take(5).collect();
                t.sort();
                t
            };
            prop_assert_eq!(top(&build(0.0)), top(&build(c)));
        }

        #[test]
        fn beta_zero_ranks_by_similarity(sims in prop::collection::hash_set(0u32..10_000, 1..40)) {
            let sims: Vec<f64> = sims.into_iter().map(|s| s as f64 / 10_000.0).collect();
            let fused: Vec<f64> = sims.iter().map(|&s| combine_scores(s, 2.5, 0.0)).collect();
            prop_assert_eq!(ranked(&fused), ranked(&sims));
        }
    }
}
