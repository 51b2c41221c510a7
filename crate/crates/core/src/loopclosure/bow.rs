use std::collections::BTreeMap;

use super::{binarize, BinaryDescriptor, VocabularyTree};
use crate::features::FeatureSet;

/// Sparse L1-normalised TF-IDF histogram over vocabulary words.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BowVector(pub BTreeMap<u32, f64>);

impl BowVector {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.values().map(|v| v.abs()).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.keys().copied()
    }
}

/// `1 − ½‖a − b‖₁`.
pub fn bow_similarity(a: &BowVector, b: &BowVector) -> f64 {
    let mut diff = 0.0;
    let (mut ia, mut ib) = (a.0.iter().peekable(), b.0.iter().peekable());
    loop {
        match (ia.peek(), ib.peek()) {
            (Some((wa, va)), Some((wb, vb))) => {
                if wa == wb {
                    diff += (*va - *vb).abs();
                    ia.next();
                    ib.next();
                } else if wa < wb {
                    diff += va.abs();
                    ia.next();
                } else {
                    diff += vb.abs();
                    ib.next();
                }
            }
            (Some((_, va)), None) => {
                diff += va.abs();
                ia.next();
            }
            (None, Some((_, vb))) => {
                diff += vb.abs();
                ib.next();
            }
            (None, None) => break,
        }
    }
    1.0 - 0.5 * diff
}

/// TF-IDF histogram of already binarized descriptors.
pub fn quantize_binary(tree: &VocabularyTree, descriptors: &[BinaryDescriptor]) -> BowVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for d in descriptors {
        *counts.entry(tree.word_of(d)).or_default() += 1.0;
    }
    let n = descriptors.len() as f64;
    let mut weights: BTreeMap<u32, f64> = counts
        .into_iter()
        .map(|(w, c)| (w, c / n * tree.idf(w)))
        .filter(|(_, v)| *v > 0.0)
        .collect();
    let total: f64 = weights.values().sum();
    if total > 0.0 {
        for v in weights.values_mut() {
            *v /= total;
        }
    }
    BowVector(weights)
}

/// Binarizes every descriptor of the set and builds its histogram.
pub fn quantize(tree: &VocabularyTree, features: &FeatureSet) -> BowVector {
    let bin: Vec<BinaryDescriptor> = (0..features.len()).map(|i| binarize(features.descriptor(i))).collect();
    quantize_binary(tree, &bin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopclosure::train_vocabulary;
    use nalgebra::Vector2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tree() -> VocabularyTree {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus: Vec<BinaryDescriptor> =
            (0..300).map(|_| BinaryDescriptor([rng.random(), rng.random(), rng.random(), rng.random()])).collect();
        train_vocabulary(&corpus, 4, 3, 1).unwrap()
    }

    #[test]
    fn empty_set_gives_empty_vector() {
        let t = tree();
        assert!(quantize(&t, &FeatureSet::empty(256, 10, 10)).is_empty());
    }

    #[test]
    fn leaf_centre_gets_full_weight() {
        let t = tree();
        let centre = t.nodes[t.words[5]].center;
        let mut f = FeatureSet::empty(256, 10, 10);
        let d: Vec<f32> = (0..256).map(|i| if centre.bit(i) { 1.0 } else { -1.0 }).collect();
        f.push(Vector2::new(1.0, 1.0), 0.9, &d);
        let bow = quantize(&t, &f);
        assert_eq!(bow.0.len(), 1);
        assert_eq!(bow.0[&t.word_of(&centre)], 1.0);
    }

    #[test]
    fn similarity_extremes() {
        let a = BowVector([(1, 0.5), (2, 0.5)].into_iter().collect());
        let b = BowVector([(3, 1.0)].into_iter().collect());
        assert_eq!(bow_similarity(&a, &a), 1.0);
        assert_eq!(bow_similarity(&a, &b), 0.0);
    }

    proptest! {
        #[test]
        fn normalised_and_self_similar(seed in 0u64..100, n in 1usize..60) {
            let t = tree();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mk = |rng: &mut ChaCha8Rng| -> Vec<BinaryDescriptor> {
                (0..n).map(|_| BinaryDescriptor([rng.random(), rng.random(), rng.random(), rng.random()])).collect()
            };
            let q = quantize_binary(&t, &mk(&mut rng));
            let r = quantize_binary(&t, &mk(&mut rng));
            prop_assert!((q.l1_norm() - 1.0).abs() < 1e-9);
            prop_assert!(q.0.values().all(|v| *v >= 0.0));
            prop_assert!(bow_similarity(&q, &q) >= bow_similarity(&q, &r));
            prop_assert!((bow_similarity(&q, &r) - bow_similarity(&r, &q)).abs() < 1e-15);
        }
    }
}
