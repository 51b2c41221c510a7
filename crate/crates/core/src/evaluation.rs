//! Trajectory files, timestamp association, alignment and ATE/RPE metrics.
//!
//! Trajectory poses are camera-to-world: the translation is the camera
//! position in the world frame.

use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::{umeyama_svd, PoseSE3, PoseSim3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trajectories do not overlap in time")]
    EmptyOverlap,
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("trajectory too short: {len} samples for delta {delta}")]
    TooShort { len: usize, delta: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("timestamps must increase strictly (line {line})")]
    NonMonotonic { line: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e.to_string())
    }
}

/// Time-ordered camera-to-world poses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryEstimate {
    samples: Vec<(f64, PoseSE3)>,
}

impl TrajectoryEstimate {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails unless timestamps increase strictly.
    pub fn from_samples(samples: Vec<(f64, PoseSE3)>) -> Result<Self, EvalError> {
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(EvalError::NonMonotonic { line: i + 2 });
            }
        }
        Ok(Self { samples })
    }

    /// Appends a sample; it must be later than the last one.
    pub fn push(&mut self, timestamp: f64, pose: PoseSE3) -> Result<(), EvalError> {
        if self.samples.last().is_some_and(|(t, _)| *t >= timestamp) {
            return Err(EvalError::NonMonotonic { line: self.samples.len() + 1 });
        }
        self.samples.push((timestamp, pose));
        Ok(())
    }

    pub fn samples(&self) -> &[(f64, PoseSE3)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes `timestamp tx ty tz qx qy qz qw` lines.
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), EvalError> {
        writeln!(out, "# timestamp tx ty tz qx qy qz qw")?;
        for (t, p) in &self.samples {
            let q = p.rotation.quaternion();
            let x = p.translation;
            writeln!(out, "{t:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}", x.x, x.y, x.z, q.i, q.j, q.k, q.w)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, EvalError> {
        let mut samples = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v = parse_numbers(line, n + 1, char::is_whitespace)?;
            if v.len() != 8 {
                return Err(EvalError::Parse { line: n + 1, message: format!("expected 8 fields, got {}", v.len()) });
            }
            samples.push((v[0], pose_from(v[1], v[2], v[3], v[7], v[4], v[5], v[6], n + 1)?));
        }
        Self::from_samples(samples)
    }

    /// EuRoC/TUM-VI ground-truth CSV: nanosecond timestamp, position, then the
    /// quaternion scalar-first. Extra columns are ignored.
    pub fn read_euroc_csv<R: BufRead>(input: R) -> Result<Self, EvalError> {
        let mut samples = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v = parse_numbers(line, n + 1, |c| c == ',')?;
            if v.len() < 8 {
                return Err(EvalError::Parse { line: n + 1, message: format!("expected at least 8 columns, got {}", v.len()) });
            }
            samples.push((v[0] * 1e-9, pose_from(v[1], v[2], v[3], v[4], v[5], v[6], v[7], n + 1)?));
        }
        Self::from_samples(samples)
    }
}

fn parse_numbers(line: &str, n: usize, sep: impl Fn(char) -> bool) -> Result<Vec<f64>, EvalError> {
    line.split(sep)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f64::from_str(s).map_err(|_| EvalError::Parse { line: n, message: format!("not a number: {s}") }))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn pose_from(x: f64, y: f64, z: f64, qw: f64, qx: f64, qy: f64, qz: f64, line: usize) -> Result<PoseSE3, EvalError> {
    let q = Quaternion::new(qw, qx, qy, qz);
    if !(q.norm() > 1e-9) {
        return Err(EvalError::Parse { line, message: "zero quaternion".into() });
    }
    Ok(PoseSE3::new(UnitQuaternion::from_quaternion(q), Vector3::new(x, y, z)))
}

/// One associated sample; both poses camera-to-world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosePair {
    pub timestamp: f64,
    pub estimate: PoseSE3,
    pub truth: PoseSE3,
}

/// Default association tolerance, seconds.
pub const DEFAULT_MAX_DT: f64 = 0.02;

/// Greedy one-to-one pairing by closest timestamps within `max_dt`, ordered
/// by the estimate's time.
pub fn associate(est: &TrajectoryEstimate, gt: &TrajectoryEstimate, max_dt: f64) -> Result<Vec<PosePair>, EvalError> {
    assert!(max_dt > 0.0, "max_dt must be positive");
    let g = gt.samples();
    let mut candidates = Vec::new();
    for (i, (te, _)) in est.samples().iter().enumerate() {
        let start = g.partition_point(|(t, _)| *t < te - max_dt);
        for (j, (tg, _)) in g.iter().enumerate().skip(start) {
            if *tg > te + max_dt {
                break;
            }
            candidates.push(((te - tg).abs(), i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; est.len()];
    let mut used_g = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_e[i] && !used_g[j] {
            used_e[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::EmptyOverlap);
    }
    pairs.sort_unstable();
    Ok(pairs
        .into_iter()
        .map(|(i, j)| PosePair { timestamp: est.samples()[i].0, estimate: est.samples()[i].1, truth: g[j].1 })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    None,
    Se3,
    Sim3,
}

impl FromStr for AlignMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(AlignMode::None),
            "se3" => Ok(AlignMode::Se3),
            "sim3" => Ok(AlignMode::Sim3),
            other => Err(format!("unknown alignment {other:?} (none, se3, sim3)")),
        }
    }
}

/// Least-squares alignment of estimated positions onto ground truth. Returns
/// the transform and the pairs with the estimate moved into the truth frame.
pub fn align(pairs: &[PosePair], mode: AlignMode) -> Result<(PoseSim3, Vec<PosePair>), EvalError> {
    if mode == AlignMode::None {
        return Ok((PoseSim3::identity(), pairs.to_vec()));
    }
    if pairs.len() < 3 {
        return Err(EvalError::Degenerate(format!("{} pairs, need 3", pairs.len())));
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|p| p.estimate.translation).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|p| p.truth.translation).collect();
    let s = umeyama_svd(&src, &dst, mode == AlignMode::Sim3).map_err(|e| EvalError::Degenerate(e.to_string()))?;
    let aligned = pairs
        .iter()
        .map(|p| PosePair {
            estimate: PoseSE3::new(s.rotation * p.estimate.rotation, s.transform(&p.estimate.translation)),
            ..*p
        })
        .collect();
    Ok((s, aligned))
}

/// Root-mean-square position error.
pub fn ate_rmse(pairs: &[PosePair]) -> f64 {
    assert!(!pairs.is_empty(), "ATE needs at least one pair");
    let sq: f64 = pairs.iter().map(|p| (p.estimate.translation - p.truth.translation).norm_squared()).sum();
    (sq / pairs.len() as f64).sqrt()
}

/// Summary of an error series.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorStats {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn of(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return Self::default();
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        Self { rmse, mean, median, std, max: *sorted.last().expect("non-empty") }
    }
}

/// Per-pair position errors.
pub fn position_errors(pairs: &[PosePair]) -> Vec<f64> {
    pairs.iter().map(|p| (p.estimate.translation - p.truth.translation).norm()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RpeDelta {
    Frames(usize),
    Seconds(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RpeResult {
    pub translation: ErrorStats,
    pub rotation: ErrorStats,
}

/// Relative pose error over index pairs `(i, j)`.
fn relative_errors(pairs: &[PosePair], steps: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
    steps
        .iter()
        .map(|&(i, j)| {
            let gt = pairs[i].truth.inverse().compose(&pairs[j].truth);
            let est = pairs[i].estimate.inverse().compose(&pairs[j].estimate);
            let e = gt.inverse().compose(&est);
            (e.translation.norm(), e.rotation.angle())
        })
        .unzip()
}

/// RMSE (and spread) of `(gt_i⁻¹ gt_j)⁻¹ (est_i⁻¹ est_j)` over the pairs
/// `delta` apart, translation and rotation reported separately.
pub fn rpe(pairs: &[PosePair], delta: RpeDelta) -> Result<RpeResult, EvalError> {
    let steps: Vec<(usize, usize)> = match delta {
        RpeDelta::Frames(d) => {
            if d == 0 || pairs.len() <= d {
                return Err(EvalError::TooShort { len: pairs.len(), delta: d });
            }
            (0..pairs.len() - d).map(|i| (i, i + d)).collect()
        }
        RpeDelta::Seconds(s) => {
            let steps: Vec<(usize, usize)> = (0..pairs.len())
                .filter_map(|i| {
                    let target = pairs[i].timestamp + s;
                    let j = pairs.partition_point(|p| p.timestamp < target);
                    (j < pairs.len()).then_some((i, j))
                })
                .collect();
            if steps.is_empty() {
                return Err(EvalError::TooShort { len: pairs.len(), delta: 0 });
            }
            steps
        }
    };
    let (t, r) = relative_errors(pairs, &steps);
    Ok(RpeResult { translation: ErrorStats::of(&t), rotation: ErrorStats::of(&r) })
}

/// `(translation RMSE, rotation RMSE)` for a frame delta.
pub fn rpe_rmse(pairs: &[PosePair], delta_frames: usize) -> Result<(f64, f64), EvalError> {
    let r = rpe(pairs, RpeDelta::Frames(delta_frames))?;
    Ok((r.translation.rmse, r.rotation.rmse))
}

/// Associates, aligns and returns the ATE RMSE with the aligned pairs.
pub fn evaluate_ate(
    est: &TrajectoryEstimate,
    gt: &TrajectoryEstimate,
    mode: AlignMode,
    max_dt: f64,
) -> Result<(f64, Vec<PosePair>), EvalError> {
    let pairs = associate(est, gt, max_dt)?;
    let (_, aligned) = align(&pairs, mode)?;
    Ok((ate_rmse(&aligned), aligned))
}

/// Per-frame CSV `timestamp,position_error` for external plotting.
pub fn write_error_csv<W: Write>(pairs: &[PosePair], mut out: W) -> Result<(), EvalError> {
    writeln!(out, "timestamp,position_error")?;
    for (p, e) in pairs.iter().zip(position_errors(pairs)) {
        writeln!(out, "{:?},{:?}", p.timestamp, e)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at(x: f64, y: f64, z: f64) -> PoseSE3 {
        PoseSE3::from_translation(Vector3::new(x, y, z))
    }

    fn pair(est: PoseSE3, truth: PoseSE3) -> PosePair {
        PosePair { timestamp: 0.0, estimate: est, truth }
    }

    fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<PoseSE3> {
        (0..n)
            .map(|_| {
                PoseSE3::new(
                    UnitQuaternion::from_euler_angles(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                    Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                )
            })
            .collect()
    }

    #[test]
    fn ate_examples() {
        let p = at(1.0, 2.0, 3.0);
        assert_eq!(ate_rmse(&[pair(p, p)]), 0.0);
        assert!((ate_rmse(&[pair(at(3.0, 4.0, 0.0), at(0.0, 0.0, 0.0))]) - 5.0).abs() < 1e-12);
        let two = [pair(at(1.0, 1.0, 1.0), at(1.0, 1.0, 1.0)), pair(at(2.0, 0.0, 0.0), at(0.0, 0.0, 0.0))];
        assert!((ate_rmse(&two) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let poses = random_trajectory(&mut rng, 20);
        let traj = TrajectoryEstimate::from_samples(poses.iter().enumerate().map(|(i, p)| (i as f64 * 0.05 + 0.1, *p)).collect()).unwrap();
        let mut buf = Vec::new();
        traj.write(&mut buf).unwrap();
        let back = TrajectoryEstimate::read(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 20);
        for (a, b) in traj.samples().iter().zip(back.samples()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.translation, b.1.translation);
            assert!(a.1.rotation.angle_to(&b.1.rotation) < 1e-15);
        }
    }

    #[test]
    fn euroc_csv_converts_nanoseconds() {
        let csv = "#timestamp [ns], p_RS_R_x [m], p_RS_R_y [m], p_RS_R_z [m], q_RS_w [], q_RS_x [], q_RS_y [], q_RS_z []\n\
                   1403715273262142976,1.0,2.0,3.0,1.0,0.0,0.0,0.0,0.1,0.2\n\
                   1403715273267142912,1.5,2.0,3.0,0.0,1.0,0.0,0.0,0.1,0.2\n";
        let t = TrajectoryEstimate::read_euroc_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.samples()[0].0 - 1403715273.262143).abs() < 1e-6);
        assert_eq!(t.samples()[1].1.translation, Vector3::new(1.5, 2.0, 3.0));
        assert!((t.samples()[1].1.rotation.angle() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(TrajectoryEstimate::read("0 1 2 3\n".as_bytes()).is_err());
        assert!(TrajectoryEstimate::read("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n".as_bytes()).is_err());
    }

    #[test]
    fn identical_timestamps_pair_fully() {
        let t = TrajectoryEstimate::from_samples((0..10).map(|i| (i as f64, at(i as f64, 0.0, 0.0))).collect()).unwrap();
        assert_eq!(associate(&t, &t, DEFAULT_MAX_DT).unwrap().len(), 10);
    }

    #[test]
    fn disjoint_ranges_do_not_overlap() {
        let a = TrajectoryEstimate::from_samples((0..5).map(|i| (i as f64, PoseSE3::identity())).collect()).unwrap();
        let b = TrajectoryEstimate::from_samples((0..5).map(|i| (100.0 + i as f64, PoseSE3::identity())).collect()).unwrap();
        assert_eq!(associate(&a, &b, DEFAULT_MAX_DT).unwrap_err(), EvalError::EmptyOverlap);
    }

    /// Maximum-cardinality, then minimum total |Δt| assignment by exhaustion.
    fn brute_force(te: &[f64], tg: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
        fn go(i: usize, te: &[f64], tg: &[f64], max_dt: f64, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, best: &mut (usize, f64, Vec<(usize, usize)>)) {
            if i == te.len() {
                let cost: f64 = cur.iter().map(|&(a, b)| (te[a] - tg[b]).abs()).sum();
                if cur.len() > best.0 || (cur.len() == best.0 && cost < best.1 - 1e-15) {
                    *best = (cur.len(), cost, cur.clone());
                }
                return;
            }
            go(i + 1, te, tg, max_dt, used, cur, best);
            for j in 0..tg.len() {
                if !used[j] && (te[i] - tg[j]).abs() <= max_dt {
                    used[j] = true;
                    cur.push((i, j));
                    go(i + 1, te, tg, max_dt, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = (0, f64::INFINITY, Vec::new());
        go(0, te, tg, max_dt, &mut vec![false; tg.len()], &mut Vec::new(), &mut best);
        best.2
    }

    #[test]
    fn jittered_association_matches_exhaustive_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..=8);
            let m = rng.random_range(2..=8);
            let base: Vec<f64> = (0..10).map(|i| i as f64 * 0.05).collect();
            let mut te: Vec<f64> = base.iter().take(n).map(|t| t + rng.random_range(-0.009..0.009)).collect();
            let mut tg: Vec<f64> = base.iter().skip(10 - m).map(|t| t + rng.random_range(-0.009..0.009)).collect();
            te.sort_by(f64::total_cmp);
            tg.sort_by(f64::total_cmp);
            let est = TrajectoryEstimate::from_samples(te.iter().map(|&t| (t, PoseSE3::identity())).collect()).unwrap();
            let gt = TrajectoryEstimate::from_samples(tg.iter().enumerate().map(|(j, &t)| (t, at(j as f64, 0.0, 0.0))).collect()).unwrap();
            let oracle = brute_force(&te, &tg, DEFAULT_MAX_DT);
            match associate(&est, &gt, DEFAULT_MAX_DT) {
                Ok(pairs) => {
                    let got: Vec<(usize, usize)> = pairs
                        .iter()
                        .map(|p| (te.iter().position(|&t| t == p.timestamp).unwrap(), p.truth.translation.x as usize))
                        .collect();
                    let mut want = oracle.clone();
                    want.sort_unstable();
                    assert_eq!(got, want);
                }
                Err(_) => assert!(oracle.is_empty()),
            }
        }
    }

    #[test]
    fn se3_alignment_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_trajectory(&mut rng, 30);
        let r = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1);
        let t = Vector3::new(1.0, -2.0, 0.5);
        let pairs: Vec<PosePair> = gt.iter().map(|g| pair(PoseSE3::new(r * g.rotation, r * g.translation + t), *g)).collect();
        let (s, aligned) = align(&pairs, AlignMode::Se3).unwrap();
        assert!(s.rotation.angle_to(&r.inverse()) < 1e-9);
        assert!(ate_rmse(&aligned) < 1e-9);
    }

    #[test]
    fn no_alignment_leaves_positions() {
        let pairs = vec![pair(at(1.0, 0.0, 0.0), at(0.0, 0.0, 0.0)); 4];
        let (s, aligned) = align(&pairs, AlignMode::None).unwrap();
        assert_eq!(s, PoseSim3::identity());
        assert_eq!(aligned, pairs);
    }

    #[test]
    fn sim3_alignment_recovers_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = random_trajectory(&mut rng, 30);
        let pairs: Vec<PosePair> = gt.iter().map(|g| pair(PoseSE3::new(g.rotation, 2.0 * g.translation), *g)).collect();
        let (s, aligned) = align(&pairs, AlignMode::Sim3).unwrap();
        assert!((s.scale - 0.5).abs() < 1e-12);
        assert!(ate_rmse(&aligned) < 1e-9);
        let (_, rigid) = align(&pairs, AlignMode::Se3).unwrap();
        assert!(ate_rmse(&rigid) > 0.1);
    }

    #[test]
    fn alignment_needs_three_pairs() {
        let pairs = vec![pair(at(1.0, 0.0, 0.0), at(0.0, 0.0, 0.0)); 2];
        assert!(matches!(align(&pairs, AlignMode::Sim3), Err(EvalError::Degenerate(_))));
    }

    #[test]
    fn rpe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt = random_trajectory(&mut rng, 10);
        let same: Vec<PosePair> = gt.iter().map(|g| pair(*g, *g)).collect();
        let (t, r) = rpe_rmse(&same, 1).unwrap();
        assert!(t < 1e-12 && r < 1e-12);
        let offset = PoseSE3::new(UnitQuaternion::from_euler_angles(0.4, 0.1, -0.3), Vector3::new(5.0, -1.0, 2.0));
        let moved: Vec<PosePair> = gt.iter().map(|g| pair(offset.compose(g), *g)).collect();
        let (t, r) = rpe_rmse(&moved, 1).unwrap();
        assert!(t < 1e-9 && r < 1e-9);
        assert!(matches!(rpe_rmse(&same, 10), Err(EvalError::TooShort { .. })));
    }

    #[test]
    fn rpe_with_one_corrupted_pose_matches_hand_residual() {
        let gt: Vec<PoseSE3> = (0..5).map(|i| at(i as f64, 0.0, 0.0)).collect();
        let mut est: Vec<PosePair> = gt.iter().map(|g| pair(*g, *g)).collect();
        est[2].estimate = at(2.0, 0.3, 0.0);
        // Steps (1,2) and (2,3) each see a 0.3 m lateral residual; the other two are exact.
        let (t, r) = rpe_rmse(&est, 1).unwrap();
        assert!((t - (2.0 * 0.09f64 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rpe_seconds_delta() {
        let gt: Vec<PosePair> = (0..20)
            .map(|i| PosePair { timestamp: i as f64 * 0.1, estimate: at(i as f64, 0.0, 0.0), truth: at(i as f64, 0.0, 0.0) })
            .collect();
        let r = rpe(&gt, RpeDelta::Seconds(0.5)).unwrap();
        assert_eq!(r.translation.rmse, 0.0);
    }

    #[test]
    fn std_is_bounded_by_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let e: Vec<f64> = (0..rng.random_range(1..30)).map(|_| rng.random_range(0.0..2.0)).collect();
            let s = ErrorStats::of(&e);
            assert!(s.std * s.std <= s.rmse * s.rmse + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn alignment_nesting(seed in 0u64..10_000, n in 4usize..40, noise in 0.0..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = random_trajectory(&mut rng, n);
            let offset = PoseSE3::new(UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), 0.2, 0.1), Vector3::new(1.0, 2.0, 3.0));
            let scale = rng.random_range(0.2..5.0);
            let pairs: Vec<PosePair> = gt
                .iter()
                .map(|g| {
                    let jitter = Vector3::new(rng.random_range(-noise..=noise), rng.random_range(-noise..=noise), rng.random_range(-noise..=noise));
                    let p = offset.compose(g);
                    pair(PoseSE3::new(p.rotation, scale * p.translation + jitter), *g)
                })
                .collect();
            let none = ate_rmse(&align(&pairs, AlignMode::None).unwrap().1);
            let se3 = ate_rmse(&align(&pairs, AlignMode::Se3).unwrap().1);
            let sim3 = ate_rmse(&align(&pairs, AlignMode::Sim3).unwrap().1);
            prop_assert!(sim3 <= se3 + 1e-9 && se3 <= none + 1e-9, "{sim3} {se3} {none}");
        }

        #[test]
        fn ate_invariant_under_common_rigid_motion(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_trajectory(&mut rng, 12);
            let b = random_trajectory(&mut rng, 12);
            let m = random_trajectory(&mut rng, 1)[0];
            let pairs: Vec<PosePair> = a.iter().zip(&b).map(|(x, y)| pair(*x, *y)).collect();
            let moved: Vec<PosePair> = a.iter().zip(&b).map(|(x, y)| pair(m.compose(x), m.compose(y))).collect();
            prop_assert!((ate_rmse(&pairs) - ate_rmse(&moved)).abs() < 1e-9);
        }
    }
}
