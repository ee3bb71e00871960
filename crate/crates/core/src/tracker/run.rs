use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::memory::{FrameCache, FrameEvents, Scheduler};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{cosine_window, sample_candidates, sample_training_boxes, BBox, BoxState, TrainingDraw};
use crate::men::{backproject_argmax, make_score_labels, search_window, train_amen, train_amen_with, Amen, Fmen, ScoreLabels};
use crate::nn::SgdState;
use crate::siamese::{buffered_similarity, Embedding, Features, SiameseNet};
use crate::synth::Sequence;
use crate::tensor::Tensor;
use crate::wcnn::{combine_scores, estimate_state, train_wcnn, ScoredCandidate, Wcnn};

/// Which components the online loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Candidates only around the previous estimate.
    NoMen,
    /// Fusion weight fixed at zero, so fused score equals similarity.
    NoWcnn,
    /// Anchor-only similarity; the buffer never changes.
    NoBuffer,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoMen, Variant::NoWcnn, Variant::NoBuffer];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMen => "no-men",
            Variant::NoWcnn => "no-wcnn",
            Variant::NoBuffer => "no-buffer",
        }
    }

    pub fn uses_men(self) -> bool {
        self != Variant::NoMen
    }

    pub fn uses_wcnn(self) -> bool {
        self != Variant::NoWcnn
    }

    pub fn uses_buffer(self) -> bool {
        self != Variant::NoBuffer
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; expected full, no-men, no-wcnn or no-buffer")))
    }
}

/// Offline-trained networks, shared read-only by every tracker.
#[derive(Debug, Clone)]
pub struct Models {
    pub siamese: SiameseNet,
    pub fmen: Fmen,
}

/// Result of one tracked frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    /// 1-based frame index.
    pub frame: usize,
    pub state: BoxState,
    pub bbox: BBox,
    pub score: f64,
    pub buffer_size: usize,
    pub updated_short: bool,
    pub updated_long: bool,
    /// Patch extraction or scoring failed; the previous state was kept.
    pub lost: bool,
    pub men_center: Option<(f64, f64)>,
    /// Raw motion-head logits when recording is on.
    pub score_map: Option<Tensor>,
    /// Scored candidates (embeddings stripped) when recording is on.
    pub candidates: Vec<ScoredCandidate>,
}

struct Head<N> {
    net: N,
    sgd: SgdState,
}

/// Online tracker state. Mutated only through [`Tracker::track_frame`].
pub struct Tracker<'m> {
    models: &'m Models,
    cfg: Config,
    variant: Variant,
    rng: ChaCha8Rng,
    image_size: (usize, usize),
    state: BoxState,
    score: f64,
    t: usize,
    scheduler: Scheduler,
    amen: Option<Head<Amen>>,
    wcnn: Option<Head<Wcnn>>,
    labels: ScoreLabels,
    cos: Tensor,
    record: bool,
}

fn embed_ok(net: &SiameseNet, feats: &Features, boxes: &[BBox], threads: usize) -> Result<Vec<Embedding>> {
    Ok(net.embed_each(feats, boxes, threads)?.into_iter().filter_map(|e| e.ok()).collect())
}

fn refs(v: &[Embedding]) -> Vec<&[f64]> {
    v.iter().map(|e| e.as_slice()).collect()
}

fn subsample<T: Clone, R: rand::Rng>(v: &[T], k: usize, rng: &mut R) -> Vec<T> {
    if v.len() <= k {
        return v.to_vec();
    }
    let mut idx = sample(rng, v.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| v[i].clone()).collect()
}

/// Windowed motion features for search windows centred on `boxes`.
/// Windows that miss the image are skipped.
fn men_features(fmen: &Fmen, frame: &Tensor, boxes: &[BBox], factor: f64, cos: &Tensor) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        match fmen.window_features(frame, &search_window(b, factor), cos) {
            Ok(f) => out.push(f),
            Err(Error::NoOverlap(_) | Error::DegenerateBox(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn to_f32(t: &Tensor) -> Vec<f32> {
    t.data().iter().map(|&v| v as f32).collect()
}

impl<'m> Tracker<'m> {
    /// First-frame initialization around the ground-truth box `gt`.
    pub fn init(models: &'m Models, cfg: &Config, variant: Variant, frame: &Tensor, gt: &BBox, seed: u64) -> Result<Self> {
        cfg.validate()?;
        gt.validate()?;
        let (_, h, w) = frame.chw()?;
        let tc = &cfg.tracker;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = models.siamese.features(frame)?;
        let anchor = models
            .siamese
            .embed_each(&feats, std::slice::from_ref(gt), 1)?
            .pop()
            .expect("one roi")
            .map_err(|e| Error::DegenerateBox(format!("first-frame box {gt} has no usable embedding: {e}")))?;

        let pos_boxes = sample_training_boxes(gt, TrainingDraw::Positive, tc.n1_pos, tc.pos_iou, (w, h), &mut rng);
        let neg_boxes = sample_training_boxes(gt, TrainingDraw::Negative, tc.n1_neg, tc.neg_iou, (w, h), &mut rng);
        let pos = embed_ok(&models.siamese, &feats, &pos_boxes, tc.threads)?;
        let neg = embed_ok(&models.siamese, &feats, &neg_boxes, tc.threads)?;
        if pos.is_empty() {
            return Err(Error::DegenerateBox(format!("no positive samples around {gt}")));
        }

        let wcnn = if variant.uses_wcnn() {
            let mut net = Wcnn::new(&cfg.wcnn, cfg.siamese.embed_dim(), &mut rng);
            let mut sgd = net.sgd(&cfg.wcnn)?;
            let losses = train_wcnn(&mut net, &refs(&pos), &refs(&neg), &cfg.wcnn, cfg.wcnn.init_epochs, &mut sgd, &mut rng)?;
            log::debug!("weighting head init loss {:?} -> {:?}", losses.first(), losses.last());
            Some(Head { net, sgd })
        } else {
            None
        };

        let labels = make_score_labels(cfg.men.score_map, cfg.men.radius)?;
        let cos = cosine_window(cfg.men.score_map, cfg.men.score_map)?;
        let mut men_cache = Vec::new();
        let amen = if variant.uses_men() {
            let k = cfg.men.init_positives.min(pos_boxes.len());
            let maps = men_features(&models.fmen, frame, &pos_boxes[..k], cfg.men.search_factor, &cos)?;
            let mut net = Amen::new(&cfg.men, models.fmen.channels(), &mut rng);
            let mut sgd = net.sgd(&cfg.men)?;
            train_amen(&mut net, &maps, &labels, cfg.men.init_epochs, &mut sgd, &mut rng)?;
            men_cache = maps.iter().map(to_f32).collect();
            Some(Head { net, sgd })
        } else {
            None
        };

        let first = FrameCache {
            positives: subsample(&pos, tc.first_frame_cache_pos, &mut rng),
            negatives: subsample(&neg, tc.first_frame_cache_neg, &mut rng),
            men_features: men_cache,
        };
        let scheduler = Scheduler::new(tc, anchor, first, variant.uses_buffer())?;
        Ok(Self {
            models,
            cfg: cfg.clone(),
            variant,
            rng,
            image_size: (w, h),
            state: BoxState::from_box(gt),
            score: f64::NAN,
            t: 1,
            scheduler,
            amen,
            wcnn,
            labels,
            cos,
            record: false,
        })
    }

    /// Keep score maps and scored candidates in each [`FrameOutput`].
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn state(&self) -> BoxState {
        self.state
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn frame_index(&self) -> usize {
        self.t
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn wcnn(&self) -> Option<&Wcnn> {
        self.wcnn.as_ref().map(|h| &h.net)
    }

    pub fn amen(&self) -> Option<&Amen> {
        self.amen.as_ref().map(|h| &h.net)
    }

    fn lost(&self, reason: &str) -> FrameOutput {
        log::debug!("frame {}: target lost ({reason})", self.t);
        FrameOutput {
            frame: self.t,
            state: self.state,
            bbox: self.state.to_box(),
            score: self.score,
            buffer_size: self.scheduler.buffer.len(),
            updated_short: false,
            updated_long: false,
            lost: true,
            men_center: None,
            score_map: None,
            candidates: Vec::new(),
        }
    }

    /// Processes the next frame.
    pub fn track_frame(&mut self, frame: &Tensor) -> Result<FrameOutput> {
        let (_, h, w) = frame.chw()?;
        if (w, h) != self.image_size {
            return Err(Error::Shape {
                op: "track_frame",
                detail: format!("frame is {w}x{h}, sequence started at {}x{}", self.image_size.0, self.image_size.1),
            });
        }
        self.t += 1;
        let t = self.t;
        let prev = self.state;
        let factor = self.cfg.men.search_factor;
        let threads = self.cfg.tracker.threads;

        let mut men_center = None;
        let mut score_map = None;
        let mut centers = vec![prev];
        if let Some(head) = &self.amen {
            let win = search_window(&prev.to_box(), factor);
            let logits = match self.models.fmen.window_features(frame, &win, &self.cos) {
                Ok(f) => head.net.forward(&f)?,
                Err(Error::NoOverlap(_) | Error::DegenerateBox(_)) => return Ok(self.lost("search window off image")),
                Err(e) => return Err(e),
            };
            let (mx, my) = backproject_argmax(&logits, &win)?;
            men_center = Some((mx, my));
            centers.insert(0, prev.with_center(mx, my));
            if self.record {
                score_map = Some(logits);
            }
        }

        let states = sample_candidates(&centers, &self.cfg.sampler, &mut self.rng)?;
        let boxes: Vec<BBox> = states.iter().map(|s| s.to_box()).collect();
        let feats = self.models.siamese.features(frame)?;
        let embs = self.models.siamese.embed_each(&feats, &boxes, threads)?;
        let kept: Vec<(BoxState, Embedding)> = states
            .into_iter()
            .zip(embs)
            .filter_map(|(s, e)| e.ok().map(|e| (s, e)))
            .collect();
        if kept.is_empty() {
            return Ok(self.lost("no candidate produced an embedding"));
        }
        let eta = if self.variant.uses_buffer() { self.cfg.tracker.eta } else { 1.0 };
        let weights = match &self.wcnn {
            Some(head) => head.net.scores(&kept.iter().map(|(_, e)| e.as_slice()).collect::<Vec<_>>())?,
            None => vec![0.0; kept.len()],
        };
        let beta = self.cfg.wcnn.beta;
        let cands: Vec<ScoredCandidate> = kept
            .into_iter()
            .zip(weights)
            .map(|((state, embedding), weight)| {
                let sim = buffered_similarity(&embedding, &self.scheduler.buffer, eta);
                ScoredCandidate { state, embedding, sim, weight, fused: combine_scores(sim, weight, beta) }
            })
            .collect();
        let (score, mut state) = estimate_state(&cands)?;
        if !score.is_finite() {
            return Err(Error::Divergence(format!("frame {t}: fused score {score}")));
        }
        state.cx = state.cx.clamp(0.0, w as f64);
        state.cy = state.cy.clamp(0.0, h as f64);
        let best = cands
            .iter()
            .enumerate()
            .fold(0, |b, (i, c)| if c.fused > cands[b].fused { i } else { b });

        let events = self.collect_and_gate(frame, &feats, t, score, state, &cands[best].embedding)?;
        if events.updated_short {
            let frames: Vec<usize> = self.scheduler.memory.short_frames().collect();
            self.update_heads(&frames, self.cfg.wcnn.update_epochs, self.cfg.men.update_epochs)?;
        } else if events.updated_long {
            let frames: Vec<usize> = self.scheduler.memory.long_frames().collect();
            self.update_heads(&frames, self.cfg.wcnn.update_epochs, self.cfg.men.update_epochs)?;
        }

        self.state = state;
        self.score = score;
        let candidates = if self.record {
            cands.into_iter().map(|c| ScoredCandidate { embedding: Vec::new(), ..c }).collect()
        } else {
            Vec::new()
        };
        Ok(FrameOutput {
            frame: t,
            state,
            bbox: state.to_box(),
            score,
            buffer_size: events.buffer_size,
            updated_short: events.updated_short,
            updated_long: events.updated_long,
            lost: false,
            men_center,
            score_map,
            candidates,
        })
    }

    fn collect_and_gate(
        &mut self,
        frame: &Tensor,
        feats: &Features,
        t: usize,
        score: f64,
        state: BoxState,
        best: &[f64],
    ) -> Result<FrameEvents> {
        let tc = &self.cfg.tracker;
        let rng = &mut self.rng;
        let models = self.models;
        let size = self.image_size;
        let men = self.amen.is_some().then_some((&self.cos, self.cfg.men.update_positives, self.cfg.men.search_factor));
        self.scheduler.step(t, score, best, || {
            let target = state.to_box();
            let pos_boxes = sample_training_boxes(&target, TrainingDraw::Positive, tc.nt_pos, tc.pos_iou, size, rng);
            let neg_boxes = sample_training_boxes(&target, TrainingDraw::Negative, tc.nt_neg, tc.neg_iou, size, rng);
            let men_features = match men {
                Some((cos, k, factor)) => {
                    let k = k.min(pos_boxes.len());
                    men_features(&models.fmen, frame, &pos_boxes[..k], factor, cos)?.iter().map(to_f32).collect()
                }
                None => Vec::new(),
            };
            Ok(FrameCache {
                positives: embed_ok(&models.siamese, feats, &pos_boxes, tc.threads)?,
                negatives: embed_ok(&models.siamese, feats, &neg_boxes, tc.threads)?,
                men_features,
            })
        })
    }

    /// Fine-tunes both heads on positives of `frames` and negatives of the
    /// short-term set.
    fn update_heads(&mut self, frames: &[usize], wcnn_iters: usize, men_iters: usize) -> Result<()> {
        let memory = &self.scheduler.memory;
        if let Some(head) = &mut self.wcnn {
            let pos = memory.positives(frames.iter().copied());
            let neg = memory.short_negatives();
            train_wcnn(&mut head.net, &pos, &neg, &self.cfg.wcnn, wcnn_iters, &mut head.sgd, &mut self.rng)?;
        }
        if let Some(head) = &mut self.amen {
            let maps = memory.men_features(frames.iter().copied());
            let side = self.cfg.men.score_map;
            let shape = vec![self.models.fmen.channels(), side, side];
            let fetch = |i: usize| Tensor::new(shape.clone(), maps[i].iter().map(|&v| v as f64).collect());
            train_amen_with(&mut head.net, maps.len(), fetch, &self.labels, men_iters, &mut head.sgd, &mut self.rng)?;
        }
        Ok(())
    }
}

/// Tracks `seq` from its first ground-truth box. The returned outputs cover
/// frames 2 onwards.
pub fn run_sequence(models: &Models, cfg: &Config, variant: Variant, seq: &Sequence, seed: u64, record: bool) -> Result<Vec<FrameOutput>> {
    let (first, gt) = match (seq.frames.first(), seq.gt.first()) {
        (Some(f), Some(g)) => (f, g),
        _ => return Err(Error::Config(format!("sequence {} is empty", seq.name))),
    };
    let mut tracker = Tracker::init(models, cfg, variant, first, gt, seed)?;
    tracker.set_recording(record);
    seq.frames[1..].iter().map(|f| tracker.track_frame(f)).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use super::super::memory::gate;
    use crate::men::MenConfig;
    use crate::synth::{generate_sequence, MotionProfile, SequenceSpec};
    use crate::wcnn::WcnnConfig;

    pub(crate) fn tiny() -> (Models, Config) {
        let mut cfg = Config {
            siamese: crate::siamese::net::tests::tiny_config(),
            men: MenConfig { search_input: 23, score_map: 9, radius: 2.0, fmen_filters: 4, ..MenConfig::default() },
            wcnn: WcnnConfig { hidden: 4, batch_pos: 8, batch_neg: 16, neg_pool: 64, ..WcnnConfig::default() },
            ..Config::default()
        };
        cfg.sampler.n_candidates = 24;
        let t = &mut cfg.tracker;
        (t.n1_pos, t.n1_neg, t.nt_pos, t.nt_neg) = (20, 60, 6, 12);
        (t.first_frame_cache_pos, t.first_frame_cache_neg) = (10, 20);
        cfg.men.update_positives = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let models = Models {
            siamese: SiameseNet::new(cfg.siamese.clone(), &mut rng).unwrap(),
            fmen: Fmen::new(&cfg.men, &mut rng).unwrap(),
        };
        (models, cfg)
    }

    pub(crate) fn tiny_sequence(len: usize, seed: u64) -> Sequence {
        let spec = SequenceSpec {
            length: len,
            width: 40,
            height: 40,
            target_w: 10.0,
            target_h: 10.0,
            texture_seed: seed,
            motion: MotionProfile { walk_sigma: 0.5, ..MotionProfile::default() },
            ..SequenceSpec::default()
        };
        let mut seq = generate_sequence(&spec, seed).unwrap();
        seq.name = format!("tiny{seed}");
        seq
    }

    #[test]
    fn init_anchors_buffer_at_ground_truth() {
        let (models, cfg) = tiny();
        let seq = tiny_sequence(3, 2);
        let tr = Tracker::init(&models, &cfg, Variant::Full, &seq.frames[0], &seq.gt[0], 5).unwrap();
        assert_eq!(tr.state().to_box(), seq.gt[0]);
        assert!(tr.scheduler().buffer.is_empty());
        let anchor = models.siamese.embed(&seq.frames[0], &seq.gt[..1]).unwrap().remove(0);
        assert_eq!(tr.scheduler().buffer.anchor(), anchor.as_slice());
        assert_eq!(tr.scheduler().memory.short_frames().collect::<Vec<_>>(), vec![1]);
        let c = tr.scheduler().memory.cache(1).unwrap();
        assert!(c.positives.len() <= 10 && c.negatives.len() <= 20);
        assert!(!c.men_features.is_empty());
    }

    #[test]
    fn degenerate_first_box_rejected() {
        let (models, cfg) = tiny();
        let seq = tiny_sequence(2, 1);
        let bad = BBox::new(3.0, 3.0, 0.0, 5.0);
        assert!(Tracker::init(&models, &cfg, Variant::Full, &seq.frames[0], &bad, 5).is_err());
    }

    #[test]
    fn loop_respects_gates_and_bounds() {
        let (models, mut cfg) = tiny();
        cfg.tracker.tau_short = 3;
        cfg.tracker.tau_long = 5;
        let seq = tiny_sequence(12, 2);
        let out = run_sequence(&models, &cfg, Variant::Full, &seq, 9, true).unwrap();
        assert_eq!(out.len(), 11);
        for f in &out {
            assert!(f.bbox.w > 0.0 && f.bbox.h > 0.0 && f.score.is_finite());
            let d = gate(f.frame, f.score, &cfg.tracker);
            assert_eq!((f.updated_short, f.updated_long), (d.short_update, d.long_update));
            assert!(f.buffer_size <= cfg.tracker.buffer_capacity);
            assert!(f.score_map.is_some() && f.men_center.is_some());
        }
        // t = 2, 3 always collect
        assert!(out[0].buffer_size == 1 && out[1].buffer_size == 2);
    }

    #[test]
    fn runs_are_deterministic() {
        let (models, cfg) = tiny();
        let seq = tiny_sequence(6, 4);
        let a = run_sequence(&models, &cfg, Variant::Full, &seq, 1, false).unwrap();
        let b = run_sequence(&models, &cfg, Variant::Full, &seq, 1, false).unwrap();
        let key = |v: &[FrameOutput]| v.iter().map(|f| (f.bbox, f.score.to_bits())).collect::<Vec<_>>();
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn threads_do_not_change_results() {
        let (models, mut cfg) = tiny();
        let seq = tiny_sequence(5, 6);
        let a = run_sequence(&models, &cfg, Variant::Full, &seq, 1, false).unwrap();
        cfg.tracker.threads = 3;
        let b = run_sequence(&models, &cfg, Variant::Full, &seq, 1, false).unwrap();
        assert_eq!(a.iter().map(|f| f.bbox).collect::<Vec<_>>(), b.iter().map(|f| f.bbox).collect::<Vec<_>>());
    }

    #[test]
    fn ablations_switch_components_off() {
        let (models, cfg) = tiny();
        let seq = tiny_sequence(6, 5);
        let out = run_sequence(&models, &cfg, Variant::NoWcnn, &seq, 1, true).unwrap();
        for f in &out {
            assert!(f.candidates.iter().all(|c| c.weight == 0.0 && c.fused == c.sim));
        }
        let out = run_sequence(&models, &cfg, Variant::NoBuffer, &seq, 1, true).unwrap();
        assert!(out.iter().all(|f| f.buffer_size == 0));
        let out = run_sequence(&models, &cfg, Variant::NoMen, &seq, 1, true).unwrap();
        assert!(out.iter().all(|f| f.men_center.is_none() && f.score_map.is_none()));
    }

    #[test]
    fn no_buffer_similarity_is_anchor_match() {
        let (models, cfg) = tiny();
        let seq = tiny_sequence(4, 7);
        let anchor = models.siamese.embed(&seq.frames[0], &seq.gt[..1]).unwrap().remove(0);
        let mut tr = Tracker::init(&models, &cfg, Variant::NoBuffer, &seq.frames[0], &seq.gt[0], 2).unwrap();
        tr.set_recording(true);
        for f in &seq.frames[1..] {
            tr.track_frame(f).unwrap();
            assert_eq!(tr.scheduler().buffer.anchor(), anchor.as_slice());
            assert!(tr.scheduler().buffer.is_empty());
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("none".parse::<Variant>().is_err());
    }

    #[test]
    fn frame_size_change_rejected() {
        let (models, cfg) = tiny();
        let seq = tiny_sequence(2, 2);
        let mut tr = Tracker::init(&models, &cfg, Variant::Full, &seq.frames[0], &seq.gt[0], 5).unwrap();
        assert!(tr.track_frame(&Tensor::zeros(&[3, 20, 20])).is_err());
    }
}
