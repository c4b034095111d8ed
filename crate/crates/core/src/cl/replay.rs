use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::seed::{self, Stream};

/// A stored training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: Vec<f64>,
    /// Dataset label (not head index).
    pub label: usize,
    pub phase: usize,
}

/// Class-balanced exemplar memory filled by per-class reservoir sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    seed: u64,
    store: Vec<Exemplar>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            seed,
            store: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.store
    }

    pub fn count_for(&self, label: usize) -> usize {
        self.store.iter().filter(|e| e.label == label).count()
    }

    /// Per-class quotas for `classes` (in order): `capacity / k`, the first
    /// `capacity % k` classes getting one extra slot.
    fn quotas(&self, classes: &[usize]) -> Vec<usize> {
        let k = classes.len().max(1);
        let (base, extra) = (self.capacity / k, self.capacity % k);
        (0..classes.len())
            .map(|i| base + usize::from(i < extra))
            .collect()
    }

    /// Add exemplars for the classes first trained in `phase` and shrink older
    /// classes so that all `seen` classes share the capacity evenly.
    pub fn update(&mut self, phase: usize, new_classes: &[usize], seen: &[usize], train: &Dataset) {
        if self.capacity == 0 {
            return;
        }
        let quotas = self.quotas(seen);
        let mut kept: Vec<Exemplar> = Vec::with_capacity(self.capacity);
        for (&class, &quota) in seen.iter().zip(&quotas) {
            if new_classes.contains(&class) {
                let rows = reservoir(&train.indices_of(&[class]), quota, self.seed, class);
                kept.extend(rows.into_iter().map(|r| Exemplar {
                    input: train.row(r).to_vec(),
                    label: class,
                    phase,
                }));
            } else {
                kept.extend(
                    self.store
                        .iter()
                        .filter(|e| e.label == class)
                        .take(quota)
                        .cloned(),
                );
            }
        }
        self.store = kept;
    }
}

/// Algorithm R over `rows`, keeping `k`; result in reservoir slot order.
fn reservoir(rows: &[usize], k: usize, seed: u64, class: usize) -> Vec<usize> {
    let mut rng = seed::rng(seed, Stream::Replay, class as u64);
    let mut out: Vec<usize> = rows.iter().take(k).copied().collect();
    for (i, &r) in rows.iter().enumerate().skip(k) {
        let j = rng.random_range(0..=i);
        if j < k {
            out[j] = r;
        }
    }
    out
}
