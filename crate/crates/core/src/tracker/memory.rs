use std::collections::{BTreeMap, VecDeque};

use super::config::TrackerConfig;
use crate::error::{Error, Result};
use crate::siamese::{AdaptiveBuffer, Embedding};

/// Training material collected at one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameCache {
    pub positives: Vec<Embedding>,
    /// Dropped once the frame leaves the short-term set.
    pub negatives: Vec<Embedding>,
    /// Windowed motion-network features of positive windows, single precision.
    pub men_features: Vec<Vec<f32>>,
}

/// Short- and long-term frame sets with their caches.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    tau_short: usize,
    tau_long: usize,
    short: VecDeque<usize>,
    long: VecDeque<usize>,
    caches: BTreeMap<usize, FrameCache>,
}

impl MemoryStore {
    pub fn new(tau_short: usize, tau_long: usize) -> Self {
        Self {
            tau_short,
            tau_long,
            short: VecDeque::new(),
            long: VecDeque::new(),
            caches: BTreeMap::new(),
        }
    }

    /// Adds frame `t` to both sets, evicting the oldest index beyond each bound.
    pub fn insert(&mut self, t: usize, cache: FrameCache) -> Result<()> {
        if self.long.back().map_or(false, |&last| t <= last) {
            return Err(Error::Config(format!("memory frames must increase, got {t} after {:?}", self.long.back())));
        }
        self.short.push_back(t);
        self.long.push_back(t);
        self.caches.insert(t, cache);
        while self.short.len() > self.tau_short {
            let old = self.short.pop_front().expect("non-empty");
            if let Some(c) = self.caches.get_mut(&old) {
                c.negatives = Vec::new();
            }
        }
        while self.long.len() > self.tau_long {
            let old = self.long.pop_front().expect("non-empty");
            self.caches.remove(&old);
        }
        Ok(())
    }

    pub fn short_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.short.iter().copied()
    }

    pub fn long_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.long.iter().copied()
    }

    pub fn short_len(&self) -> usize {
        self.short.len()
    }

    pub fn long_len(&self) -> usize {
        self.long.len()
    }

    pub fn cache(&self, t: usize) -> Option<&FrameCache> {
        self.caches.get(&t)
    }

    pub fn cached_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.caches.keys().copied()
    }

    pub fn positives<'a>(&'a self, frames: impl Iterator<Item = usize> + 'a) -> Vec<&'a [f64]> {
        frames
            .filter_map(|f| self.caches.get(&f))
            .flat_map(|c| c.positives.iter().map(|e| e.as_slice()))
            .collect()
    }

    /// Negatives of every short-term frame.
    pub fn short_negatives(&self) -> Vec<&[f64]> {
        self.short
            .iter()
            .filter_map(|f| self.caches.get(f))
            .flat_map(|c| c.negatives.iter().map(|e| e.as_slice()))
            .collect()
    }

    pub fn men_features<'a>(&'a self, frames: impl Iterator<Item = usize> + 'a) -> Vec<&'a [f32]> {
        frames
            .filter_map(|f| self.caches.get(&f))
            .flat_map(|c| c.men_features.iter().map(|e| e.as_slice()))
            .collect()
    }
}

/// Which parts of a frame's bookkeeping fire for a fused score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateDecision {
    /// Buffer update plus sample collection into both memories.
    pub collect: bool,
    pub short_update: bool,
    pub long_update: bool,
}

/// `collect` iff `score > gate` or `t < warmup`; a short-term update iff
/// `score < gate`; otherwise a long-term update every `tau_int` frames.
/// A score exactly at the gate collects nothing and skips the short-term
/// update.
pub fn gate(t: usize, score: f64, cfg: &TrackerConfig) -> GateDecision {
    let short_update = score < cfg.score_gate;
    GateDecision {
        collect: score > cfg.score_gate || t < cfg.warmup_frames,
        short_update,
        long_update: !short_update && score >= cfg.score_gate && t % cfg.tau_int == 0,
    }
}

/// What happened at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEvents {
    pub t: usize,
    pub buffer_updated: bool,
    pub collected: bool,
    pub updated_short: bool,
    pub updated_long: bool,
    pub buffer_size: usize,
    pub short_len: usize,
    pub long_len: usize,
}

/// Buffer and memory bookkeeping of the online loop, independent of the
/// networks that consume it.
#[derive(Debug, Clone)]
pub struct Scheduler {
    cfg: TrackerConfig,
    pub buffer: AdaptiveBuffer,
    pub memory: MemoryStore,
    buffer_enabled: bool,
}

impl Scheduler {
    /// Starts from frame 1 with the anchor template and its cache.
    pub fn new(cfg: &TrackerConfig, anchor: Embedding, first: FrameCache, buffer_enabled: bool) -> Result<Self> {
        cfg.validate()?;
        let mut memory = MemoryStore::new(cfg.tau_short, cfg.tau_long);
        memory.insert(1, first)?;
        Ok(Self {
            cfg: cfg.clone(),
            buffer: AdaptiveBuffer::new(anchor, cfg.buffer_capacity),
            memory,
            buffer_enabled,
        })
    }

    /// Applies the gate for frame `t`. `collect` is only invoked when the
    /// frame is confident (or in warm-up) and supplies the frame's cache.
    pub fn step(
        &mut self,
        t: usize,
        score: f64,
        best: &[f64],
        collect: impl FnOnce() -> Result<FrameCache>,
    ) -> Result<FrameEvents> {
        let d = gate(t, score, &self.cfg);
        if d.collect {
            if self.buffer_enabled {
                self.buffer.push(best.to_vec());
            }
            self.memory.insert(t, collect()?)?;
        }
        Ok(FrameEvents {
            t,
            buffer_updated: d.collect && self.buffer_enabled,
            collected: d.collect,
            updated_short: d.short_update,
            updated_long: d.long_update,
            buffer_size: self.buffer.len(),
            short_len: self.memory.short_len(),
            long_len: self.memory.long_len(),
        })
    }
}
