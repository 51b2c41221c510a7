use std::collections::{BTreeMap, BTreeSet};

use super::{bow_similarity, BowVector};
use crate::mapping::KeyFrameId;

/// Inverted index from words to keyframes plus each keyframe's vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyframeDatabase {
    index: BTreeMap<u32, BTreeSet<KeyFrameId>>,
    vectors: BTreeMap<KeyFrameId, BowVector>,
}

impl KeyframeDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Inserts or replaces the vector of `kf`.
    pub fn add(&mut self, kf: KeyFrameId, bow: BowVector) {
        self.remove(kf);
        for w in bow.words() {
            self.index.entry(w).or_default().insert(kf);
        }
        self.vectors.insert(kf, bow);
    }

    pub fn remove(&mut self, kf: KeyFrameId) {
        if let Some(old) = self.vectors.remove(&kf) {
            for w in old.words() {
                if let Some(set) = self.index.get_mut(&w) {
                    set.remove(&kf);
                    if set.is_empty() {
                        self.index.remove(&w);
                    }
                }
            }
        }
    }

    pub fn vector(&self, kf: KeyFrameId) -> Option<&BowVector> {
        self.vectors.get(&kf)
    }

    pub fn keyframes(&self) -> impl Iterator<Item = KeyFrameId> + '_ {
        self.vectors.keys().copied()
    }

    /// Number of words each keyframe shares with `query`.
    pub fn common_words(&self, query: &BowVector) -> BTreeMap<KeyFrameId, usize> {
        let mut out: BTreeMap<KeyFrameId, usize> = BTreeMap::new();
        for w in query.words() {
            if let Some(kfs) = self.index.get(&w) {
                for &kf in kfs {
                    *out.entry(kf).or_default() += 1;
                }
            }
        }
        out
    }

    pub fn similarity(&self, query: &BowVector, kf: KeyFrameId) -> Option<f64> {
        self.vectors.get(&kf).map(|v| bow_similarity(query, v))
    }

    /// Index rebuilt from the stored vectors.
    pub fn rebuilt_index(&self) -> BTreeMap<u32, BTreeSet<KeyFrameId>> {
        let mut index: BTreeMap<u32, BTreeSet<KeyFrameId>> = BTreeMap::new();
        for (&kf, v) in &self.vectors {
            for w in v.words() {
                index.entry(w).or_default().insert(kf);
            }
        }
        index
    }

    pub fn is_consistent(&self) -> bool {
        self.rebuilt_index() == self.index
    }
}
