use std::collections::HashMap;

use nalgebra::{Matrix3, Vector2, Vector3};

use super::{KeyFrameId, MappingError, PointId, WorldMap};
use crate::features::dot;
use crate::geometry::{skew, triangulate, PinholeCamera, PoseSE3, TriangulationParams};
use crate::matching::{match_sets, MatchSet, MatcherBackend, DEFAULT_MIN_CONFIDENCE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CreateParams {
    /// Covisible keyframes searched for new points.
    pub neighbors: usize,
    /// Minimum baseline over median scene depth.
    pub min_baseline_ratio: f64,
    pub min_confidence: f64,
    pub triangulation: TriangulationParams,
    /// Epipolar-band guided matching instead of the full matcher.
    pub guided: bool,
    /// Half-width of the epipolar band, pixels.
    pub epipolar_band: f64,
    pub min_similarity: f64,
}

impl Default for CreateParams {
    fn default() -> Self {
        Self {
            neighbors: 10,
            min_baseline_ratio: 0.01,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            triangulation: TriangulationParams::default(),
            guided: false,
            epipolar_band: 3.0,
            min_similarity: 0.7,
        }
    }
}

/// Fundamental matrix mapping pixels of view A to epipolar lines in view B.
pub fn fundamental(cam_a: &PinholeCamera, pose_a: &PoseSE3, cam_b: &PinholeCamera, pose_b: &PoseSE3) -> Matrix3<f64> {
    let rel = pose_b.compose(&pose_a.inverse());
    let e = skew(&rel.translation) * rel.rotation_matrix();
    let ka_inv = cam_a.matrix().try_inverse().expect("valid intrinsics");
    let kb_inv = cam_b.matrix().try_inverse().expect("valid intrinsics");
    kb_inv.transpose() * e * ka_inv
}

/// Guided matching along epipolar lines: each A-feature takes the most
/// similar B-feature within `band` pixels of its line.
#[allow(clippy::too_many_arguments)]
pub fn match_epipolar(
    cam_a: &PinholeCamera,
    pose_a: &PoseSE3,
    a_pixels: &[Vector2<f64>],
    a_desc: &[&[f32]],
    cam_b: &PinholeCamera,
    pose_b: &PoseSE3,
    b_pixels: &[Vector2<f64>],
    b_desc: &[&[f32]],
    band: f64,
    min_similarity: f64,
) -> MatchSet {
    let f = fundamental(cam_a, pose_a, cam_b, pose_b);
    let mut claimed: HashMap<usize, (usize, f64)> = HashMap::new();
    for (i, pa) in a_pixels.iter().enumerate() {
        let line = f * Vector3::new(pa.x, pa.y, 1.0);
        let norm = (line.x * line.x + line.y * line.y).sqrt();
        if norm < 1e-12 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, pb) in b_pixels.iter().enumerate() {
            let d = (line.x * pb.x + line.y * pb.y + line.z).abs() / norm;
            if d > band {
                continue;
            }
            let s = dot(a_desc[i], b_desc[j]) as f64;
            if s >= min_similarity && best.is_none_or(|(_, bs)| s > bs) {
                best = Some((j, s));
            }
        }
        if let Some((j, s)) = best {
            if claimed.get(&j).is_none_or(|&(_, prev)| s > prev) {
                claimed.insert(j, (i, s));
            }
        }
    }
    let mut pairs: Vec<_> = claimed.into_iter().map(|(j, (i, s))| (i, j, s.clamp(0.0, 1.0))).collect();
    pairs.sort_by_key(|p| p.0);
    MatchSet { pairs, provenance: "epipolar-window".into() }
}

/// Triangulates matches between the unassociated features of `kf` and those
/// of its strongest covisible keyframes; each new point starts with two
/// observations.
pub fn create_map_points(
    map: &mut WorldMap,
    kf: KeyFrameId,
    matcher: &mut dyn MatcherBackend,
    params: &CreateParams,
) -> Result<Vec<PointId>, MappingError> {
    let neighbors = map.best_covisible(kf, params.neighbors);
    let mut created = Vec::new();
    for n in neighbors {
        created.extend(create_with_neighbor(map, kf, n, matcher, params)?);
    }
    Ok(created)
}

/// Triangulation between one keyframe pair.
pub fn create_with_neighbor(
    map: &mut WorldMap,
    kf: KeyFrameId,
    n: KeyFrameId,
    matcher: &mut dyn MatcherBackend,
    params: &CreateParams,
) -> Result<Vec<PointId>, MappingError> {
    let ka = map.keyframe(kf)?;
    let kb = map.keyframe(n)?;
    let baseline = (ka.pose.center() - kb.pose.center()).norm();
    let depth = map.median_depth(n).or_else(|| map.median_depth(kf));
    let Some(depth) = depth else { return Ok(Vec::new()) };
    if depth <= 0.0 || baseline / depth < params.min_baseline_ratio {
        return Ok(Vec::new());
    }
    let ua = ka.unassociated();
    let ub = kb.unassociated();
    if ua.is_empty() || ub.is_empty() {
        return Ok(Vec::new());
    }
    let matches = if params.guided {
        let a_pix: Vec<Vector2<f64>> = ua.iter().map(|&i| ka.features.keypoints[i]).collect();
        let b_pix: Vec<Vector2<f64>> = ub.iter().map(|&i| kb.features.keypoints[i]).collect();
        let a_desc: Vec<&[f32]> = ua.iter().map(|&i| ka.features.descriptor(i)).collect();
        let b_desc: Vec<&[f32]> = ub.iter().map(|&i| kb.features.descriptor(i)).collect();
        match_epipolar(
            &ka.camera,
            &ka.pose,
            &a_pix,
            &a_desc,
            &kb.camera,
            &kb.pose,
            &b_pix,
            &b_desc,
            params.epipolar_band,
            params.min_similarity,
        )
    } else {
        let sa = ka.features.subset(&ua);
        let sb = kb.features.subset(&ub);
        match_sets(matcher, &sa, &sb, params.min_confidence)?
    };
    let mut accepted = Vec::new();
    for &(ia, ib, _) in &matches.pairs {
        let (fa, fb) = (ua[ia], ub[ib]);
        let x = triangulate(
            &ka.camera,
            &ka.pose,
            &kb.camera,
            &kb.pose,
            &ka.features.keypoints[fa],
            &kb.features.keypoints[fb],
            &params.triangulation,
        );
        if let Ok(x) = x {
            accepted.push((x, fa, fb, ka.features.descriptor(fa).to_vec()));
        }
    }
    let mut created = Vec::with_capacity(accepted.len());
    for (x, fa, fb, desc) in accepted {
        let p = map.add_point(x, desc, kf);
        map.add_observation(p, kf, fa)?;
        map.add_observation(p, n, fb)?;
        created.push(p);
    }
    Ok(created)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSet;
    use crate::geometry::project;
    use crate::mapping::KeyFrame;
    use crate::matching::BruteForceMatcher;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(400.0, 400.0, 400.0, 300.0, 800, 600).unwrap()
    }

    /// Two keyframes sharing `shared` pre-mapped landmarks and `fresh` unmapped ones.
    fn scene(baseline: f64, shared: usize, fresh: usize) -> (WorldMap, KeyFrameId, KeyFrameId, Vec<Vector3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = cam();
        let pa = PoseSE3::identity();
        let pb = PoseSE3::new(UnitQuaternion::from_euler_angles(0.0, 0.01, 0.0), Vector3::new(-baseline, 0.0, 0.0));
        let total = shared + fresh;
        let mut xs = Vec::new();
        let mut fa = FeatureSet::empty(16, 800, 600);
        let mut fb = FeatureSet::empty(16, 800, 600);
        while xs.len() < total {
            let x = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(3.0..6.0));
            let (Some(ua), Some(ub)) = (project(&c, &pa, &x), project(&c, &pb, &x)) else { continue };
            if !c.contains(&ua) || !c.contains(&ub) {
                continue;
            }
            let d: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            fa.push(ua, 0.8, &d);
            fb.push(ub, 0.8, &d);
            xs.push(x);
        }
        let mut map = WorldMap::new();
        let a = map.add_keyframe(KeyFrame::new(0, 0.0, pa, c, fa));
        let b = map.add_keyframe(KeyFrame::new(1, 0.1, pb, c, fb));
        for (i, x) in xs.iter().enumerate().take(shared) {
            let p = map.add_point(*x, vec![0.0; 16], a);
            map.add_observation(p, a, i).unwrap();
            map.add_observation(p, b, i).unwrap();
        }
        (map, a, b, xs)
    }

    #[test]
    fn recovers_unmapped_common_landmarks() {
        let (mut map, a, _, xs) = scene(0.3, 20, 100);
        let created = create_map_points(&mut map, a, &mut BruteForceMatcher, &CreateParams::default()).unwrap();
        let good = created
            .iter()
            .filter(|p| {
                let mp = &map.points[p];
                let feature = mp.observations[&a];
                (mp.position - xs[feature]).norm() < 0.01
            })
            .count();
        assert!(good >= 80, "{good}");
        map.check_integrity().unwrap();
        assert!(created.iter().all(|p| map.points[p].obs() == 2));
    }

    #[test]
    fn zero_baseline_neighbour_is_skipped() {
        let (mut map, a, _, _) = scene(0.0, 20, 50);
        let created = create_map_points(&mut map, a, &mut BruteForceMatcher, &CreateParams::default()).unwrap();
        assert!(created.is_empty());
    }

    #[test]
    fn fully_associated_keyframes_give_nothing() {
        let (mut map, a, _, _) = scene(0.3, 40, 0);
        let created = create_map_points(&mut map, a, &mut BruteForceMatcher, &CreateParams::default()).unwrap();
        assert!(created.is_empty());
    }

    #[test]
    fn epipolar_guided_matching_finds_true_pairs() {
        let (mut map, a, _, xs) = scene(0.3, 20, 100);
        let params = CreateParams { guided: true, ..Default::default() };
        let created = create_map_points(&mut map, a, &mut BruteForceMatcher, &params).unwrap();
        let good = created.iter().filter(|p| (map.points[p].position - xs[map.points[p].observations[&a]]).norm() < 0.01).count();
        assert!(good >= 80, "{good}");
    }
}
