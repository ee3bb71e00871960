use std::collections::VecDeque;

use super::net::Embedding;

/// Inner product of two unit-norm embeddings.
pub fn match_score(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * b).sum()
}

/// First-frame template plus a FIFO of recent best candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveBuffer {
    capacity: usize,
    anchor: Embedding,
    entries: VecDeque<Embedding>,
}

impl AdaptiveBuffer {
    pub fn new(anchor: Embedding, capacity: usize) -> Self {
        Self {
            capacity,
            anchor,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn entries(&self) -> impl Iterator<Item = &Embedding> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends `best`, evicting the oldest entry beyond capacity.
    pub fn push(&mut self, best: Embedding) {
        if self.capacity == 0 {
            return;
        }
        self.entries.push_back(best);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }
}

/// `eta * M(anchor, u) + (1 - eta) * mean_i M(b_i, u)`; the anchor alone
/// when the buffer is empty.
pub fn buffered_similarity(candidate: &[f64], buffer: &AdaptiveBuffer, eta: f64) -> f64 {
    let anchor = match_score(buffer.anchor(), candidate);
    if buffer.is_empty() {
        return anchor;
    }
    let sum: f64 = buffer.entries().map(|b| match_score(b, candidate)).sum();
    eta * anchor + (1.0 - eta) / buffer.len() as f64 * sum
}
