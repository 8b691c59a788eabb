use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::kmeans::normalized;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassTag {
    Trav,
    Untrav,
}

impl ClassTag {
    pub fn opposite(self) -> ClassTag {
        match self {
            ClassTag::Trav => ClassTag::Untrav,
            ClassTag::Untrav => ClassTag::Trav,
        }
    }
}

/// Bounded FIFO of unit-norm embeddings for one class.
#[derive(Debug, Clone)]
pub struct FeatureQueue {
    pub class: ClassTag,
    capacity: usize,
    items: VecDeque<Vec<f64>>,
}

impl FeatureQueue {
    pub fn new(class: ClassTag, capacity: usize) -> Self {
        FeatureQueue {
            class,
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends a vector (renormalized), evicting the oldest entry when full.
    /// Zero and non-finite vectors are ignored; returns whether it was stored.
    pub fn push(&mut self, v: &[f64]) -> bool {
        if self.capacity == 0 || v.iter().any(|x| !x.is_finite()) || v.iter().all(|x| *x == 0.0) {
            return false;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(normalized(v));
        true
    }

    pub fn extend<'a>(&mut self, vs: impl IntoIterator<Item = &'a Vec<f64>>) {
        for v in vs {
            self.push(v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.items.iter()
    }

    pub fn to_vec(&self) -> Vec<Vec<f64>> {
        self.items.iter().cloned().collect()
    }
}
