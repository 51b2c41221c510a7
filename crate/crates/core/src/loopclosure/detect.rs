use std::collections::{BTreeMap, BTreeSet};

use super::{KeyframeDatabase, LoopError};
use crate::mapping::{KeyFrameId, WorldMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectParams {
    /// Fraction of the best common-word count a candidate must reach.
    pub common_ratio: f64,
    /// Candidate groups returned.
    pub top_groups: usize,
    /// Covisible neighbours pooled into a candidate's group.
    pub group_size: usize,
    /// Candidates scoring below this similarity are ignored.
    pub min_similarity: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { common_ratio: 0.8, top_groups: 3, group_size: 10, min_similarity: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopCandidate {
    /// Best-scoring keyframe of the group.
    pub keyframe: KeyFrameId,
    pub similarity: f64,
    /// Summed similarity of the group members.
    pub group_score: f64,
    pub group: BTreeSet<KeyFrameId>,
}

/// Ranks keyframes of `db` that could close a loop with `query`. Keyframes in
/// `exclude` (normally the query and its covisible neighbours) never qualify.
pub fn detect_candidates(
    db: &KeyframeDatabase,
    map: &WorldMap,
    query: KeyFrameId,
    exclude: &BTreeSet<KeyFrameId>,
    params: &DetectParams,
) -> Result<Vec<LoopCandidate>, LoopError> {
    let bow = db.vector(query).ok_or(LoopError::UnknownKeyFrame(query))?;
    let mut common = db.common_words(bow);
    common.retain(|k, _| *k != query && !exclude.contains(k));
    let max_common = common.values().copied().max().ok_or(LoopError::NoCandidate)?;
    let floor = params.common_ratio * max_common as f64;
    let scores: BTreeMap<KeyFrameId, f64> = common
        .iter()
        .filter(|(_, &c)| c as f64 >= floor)
        .filter_map(|(&k, _)| db.similarity(bow, k).map(|s| (k, s)))
        .filter(|(_, s)| *s >= params.min_similarity)
        .collect();
    if scores.is_empty() {
        return Err(LoopError::NoCandidate);
    }
    let mut groups: Vec<LoopCandidate> = scores
        .iter()
        .map(|(&k, &s)| {
            let mut group: BTreeSet<KeyFrameId> = [k].into_iter().collect();
            let (mut best, mut best_score, mut total) = (k, s, s);
            for n in map.best_covisible(k, params.group_size) {
                if let Some(&ns) = scores.get(&n) {
                    group.insert(n);
                    total += ns;
                    if ns > best_score {
                        best = n;
                        best_score = ns;
                    }
                }
            }
            LoopCandidate { keyframe: best, similarity: best_score, group_score: total, group }
        })
        .collect();
    groups.sort_by(|a, b| b.group_score.total_cmp(&a.group_score).then(a.keyframe.cmp(&b.keyframe)));
    let mut covered = BTreeSet::new();
    groups.retain(|g| {
        let fresh = !covered.contains(&g.keyframe);
        if fresh {
            covered.extend(g.group.iter().copied());
        }
        fresh
    });
    groups.truncate(params.top_groups);
    Ok(groups)
}

/// Temporal gate: a candidate passes once groups overlapping it have been
/// detected on `required` consecutive queries.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyGate {
    pub required: usize,
    previous: Vec<(BTreeSet<KeyFrameId>, usize)>,
}

impl ConsistencyGate {
    pub fn new(required: usize) -> Self {
        Self { required, previous: Vec::new() }
    }

    /// Feeds one detection round (empty when nothing was found) and returns
    /// the candidates that are now consistent.
    pub fn update(&mut self, candidates: &[LoopCandidate], covisible: impl Fn(KeyFrameId) -> Vec<KeyFrameId>) -> Vec<LoopCandidate> {
        let mut current = Vec::new();
        let mut passed = Vec::new();
        for c in candidates {
            let mut group: BTreeSet<KeyFrameId> = covisible(c.keyframe).into_iter().collect();
            group.insert(c.keyframe);
            let streak = self
                .previous
                .iter()
                .filter(|(g, _)| !g.is_disjoint(&group))
                .map(|(_, n)| n + 1)
                .max()
                .unwrap_or(1);
            if streak >= self.required {
                passed.push(c.clone());
            }
            current.push((group, streak));
        }
        self.previous = current;
        passed
    }

    pub fn reset(&mut self) {
        self.previous.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PoseSE3;
    use crate::loopclosure::BowVector;
    use crate::mapping::map::tests::{camera, features};
    use crate::mapping::KeyFrame;
    use nalgebra::Vector3;

    fn bow(words: &[(u32, f64)]) -> BowVector {
        let total: f64 = words.iter().map(|w| w.1).sum();
        BowVector(words.iter().map(|&(w, v)| (w, v / total)).collect())
    }

    fn map_with(n: usize) -> WorldMap {
        let mut map = WorldMap::new();
        for i in 0..n {
            map.add_keyframe(KeyFrame::new(i as u64, i as f64, PoseSE3::identity(), camera(), features(4)));
        }
        map
    }

    #[test]
    fn exact_copy_ranks_first() {
        let map = map_with(4);
        let mut db = KeyframeDatabase::new();
        db.add(0, bow(&[(1, 1.0), (2, 1.0), (3, 1.0)]));
        db.add(1, bow(&[(1, 1.0), (5, 1.0), (6, 1.0)]));
        db.add(2, bow(&[(1, 1.0), (2, 1.0), (3, 1.0)]));
        db.add(3, bow(&[(1, 1.0), (2, 1.0), (9, 1.0)]));
        let c = detect_candidates(&db, &map, 0, &BTreeSet::new(), &DetectParams::default()).unwrap();
        assert_eq!(c[0].keyframe, 2);
        assert!((c[0].similarity - 1.0).abs() < 1e-12);
        assert!(c.iter().all(|x| x.keyframe != 1), "{c:?}");
    }

    #[test]
    fn unrelated_scenes_give_no_candidate() {
        let map = map_with(3);
        let mut db = KeyframeDatabase::new();
        db.add(0, bow(&[(1, 1.0), (2, 1.0)]));
        db.add(1, bow(&[(3, 1.0), (4, 1.0)]));
        db.add(2, bow(&[(5, 1.0)]));
        let err = detect_candidates(&db, &map, 0, &BTreeSet::new(), &DetectParams::default()).unwrap_err();
        assert_eq!(err, LoopError::NoCandidate);
    }

    #[test]
    fn excluded_keyframes_are_skipped() {
        let map = map_with(3);
        let mut db = KeyframeDatabase::new();
        db.add(0, bow(&[(1, 1.0)]));
        db.add(1, bow(&[(1, 1.0)]));
        let exclude: BTreeSet<KeyFrameId> = [1].into_iter().collect();
        assert!(detect_candidates(&db, &map, 0, &exclude, &DetectParams::default()).is_err());
    }

    #[test]
    fn group_pools_covisible_candidates() {
        let mut map = map_with(4);
        let p = map.add_point(Vector3::new(0.0, 0.0, 1.0), vec![1.0, 0.0, 0.0, 0.0], 2);
        map.add_observation(p, 2, 0).unwrap();
        map.add_observation(p, 3, 0).unwrap();
        let mut db = KeyframeDatabase::new();
        db.add(0, bow(&[(1, 1.0), (2, 1.0)]));
        db.add(1, bow(&[(1, 1.0), (2, 1.0)]));
        db.add(2, bow(&[(1, 1.0), (2, 0.6)]));
        db.add(3, bow(&[(1, 1.0), (2, 0.6)]));
        let c = detect_candidates(&db, &map, 0, &BTreeSet::new(), &DetectParams::default()).unwrap();
        assert_eq!(c[0].group, [2, 3].into_iter().collect());
        assert!(c[0].group_score > c[1].group_score);
        assert_eq!(c[1].keyframe, 1);
    }

    #[test]
    fn gate_needs_consecutive_overlap() {
        let cand = |k| LoopCandidate { keyframe: k, similarity: 1.0, group_score: 1.0, group: BTreeSet::new() };
        let neighbours = |k: KeyFrameId| vec![k + 1];
        let mut gate = ConsistencyGate::new(3);
        assert!(gate.update(&[cand(10)], neighbours).is_empty());
        assert!(gate.update(&[cand(11)], neighbours).is_empty());
        assert_eq!(gate.update(&[cand(12)], neighbours).len(), 1);
        assert!(gate.update(&[cand(50)], neighbours).is_empty());
        assert!(gate.update(&[], neighbours).is_empty());
        assert!(gate.update(&[cand(51)], neighbours).is_empty());
    }
}
