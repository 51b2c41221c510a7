//! Relative pose from two monocular views: normalised eight-point essential
//! matrix inside RANSAC, cheirality-checked decomposition.

use nalgebra::{Matrix3, SMatrix, Vector2, Vector3};

use super::ransac::{draw, required_iterations};
use super::{triangulate, GeometryError, PinholeCamera, PoseSE3, RansacParams, TriangulationParams};

/// Relative pose of view B with respect to view A (`x_B = R x_A + t`,
/// `|t| = 1`) and the RANSAC inlier mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EssentialEstimate {
    pub pose: PoseSE3,
    pub inliers: Vec<bool>,
    /// Inliers that triangulate in front of both views with enough parallax.
    pub well_conditioned: usize,
}

fn hartley(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector2<f64>>() / n;
    let spread = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if spread > 1e-15 { std::f64::consts::SQRT_2 / spread } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

fn eight_point(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let ta = hartley(a);
    let tb = hartley(b);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (pa, pb) in a.iter().zip(b) {
        let xa = ta * Vector3::new(pa.x, pa.y, 1.0);
        let xb = tb * Vector3::new(pb.x, pb.y, 1.0);
        let row = SMatrix::<f64, 1, 9>::from_row_slice(&[
            xb.x * xa.x,
            xb.x * xa.y,
            xb.x * xa.z,
            xb.y * xa.x,
            xb.y * xa.y,
            xb.y * xa.z,
            xb.z * xa.x,
            xb.z * xa.y,
            xb.z * xa.z,
        ]);
        ata += row.transpose() * row;
    }
    let eig = ata.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let v = eig.eigenvectors.column(idx);
    let e_norm = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let e = tb.transpose() * e_norm * ta;
    // Project onto the essential manifold: singular values (1, 1, 0).
    let svd = e.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let e = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t;
    let n = e.norm();
    (n > 0.0).then(|| e / n)
}

/// Sampson distance squared, in normalised image units.
fn sampson(e: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let xa = Vector3::new(a.x, a.y, 1.0);
    let xb = Vector3::new(b.x, b.y, 1.0);
    let ea = e * xa;
    let etb = e.transpose() * xb;
    let num = xb.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= 1e-300 {
        f64::INFINITY
    } else {
        num * num / den
    }
}

fn decompositions(e: &Matrix3<f64>) -> Vec<PoseSE3> {
    let svd = e.svd(true, true);
    let (Some(mut u), Some(mut v_t)) = (svd.u, svd.v_t) else { return Vec::new() };
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned().normalize();
    vec![
        PoseSE3::from_rotation_matrix(&r1, t),
        PoseSE3::from_rotation_matrix(&r1, -t),
        PoseSE3::from_rotation_matrix(&r2, t),
        PoseSE3::from_rotation_matrix(&r2, -t),
    ]
}

fn count_well_conditioned(
    camera: &PinholeCamera,
    pose: &PoseSE3,
    pixels: &[(Vector2<f64>, Vector2<f64>)],
    mask: &[bool],
    tri: &TriangulationParams,
) -> usize {
    let identity = PoseSE3::identity();
    pixels
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .filter(|((a, b), _)| triangulate(camera, &identity, camera, pose, a, b, tri).is_ok())
        .count()
}

/// Estimates the relative pose between two views of a static scene.
///
/// Fails with `Degenerate` when the best decomposition leaves fewer than
/// half of the inliers (and fewer than eight points) with positive depth and
/// sufficient parallax, which covers pure rotation and zero baseline.
pub fn solve_essential_ransac(
    correspondences: &[(Vector2<f64>, Vector2<f64>)],
    camera: &PinholeCamera,
    params: &RansacParams,
    tri: &TriangulationParams,
) -> Result<EssentialEstimate, GeometryError> {
    let n = correspondences.len();
    if n < 8 {
        return Err(GeometryError::InsufficientCorrespondences { needed: 8, got: n });
    }
    let na: Vec<Vector2<f64>> = correspondences.iter().map(|(a, _)| camera.normalize(a)).collect();
    let nb: Vec<Vector2<f64>> = correspondences.iter().map(|(_, b)| camera.normalize(b)).collect();
    let f2 = camera.focal() * camera.focal();
    let gate = params.threshold * params.threshold;
    let inliers_of = |e: &Matrix3<f64>| -> Vec<bool> {
        na.iter().zip(&nb).map(|(a, b)| sampson(e, a, b) * f2 <= gate).collect()
    };

    let mut rng = params.rng();
    let mut best: Option<(Matrix3<f64>, usize)> = None;
    let mut budget = params.max_iterations;
    let mut iter = 0;
    while iter < budget.min(params.max_iterations) {
        iter += 1;
        let idx = draw(&mut rng, n, 8);
        let sa: Vec<_> = idx.iter().map(|&i| na[i]).collect();
        let sb: Vec<_> = idx.iter().map(|&i| nb[i]).collect();
        let Some(e) = eight_point(&sa, &sb) else { continue };
        let count = inliers_of(&e).iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((e, count));
            budget = required_iterations(count as f64 / n as f64, 8, params.confidence);
        }
    }
    let (mut e, _) = best.ok_or(GeometryError::Degenerate("no essential hypothesis"))?;
    let mut mask = inliers_of(&e);
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if idx.len() >= 8 {
        let sa: Vec<_> = idx.iter().map(|&i| na[i]).collect();
        let sb: Vec<_> = idx.iter().map(|&i| nb[i]).collect();
        if let Some(refined) = eight_point(&sa, &sb) {
            let refined_mask = inliers_of(&refined);
            if refined_mask.iter().filter(|&&m| m).count() >= idx.len() {
                e = refined;
                mask = refined_mask;
            }
        }
    }
    let inliers = mask.iter().filter(|&&m| m).count();
    if inliers < params.min_inliers.max(8) {
        return Err(GeometryError::NoConsensus { inliers, needed: params.min_inliers.max(8) });
    }

    let loose = TriangulationParams {
        min_parallax_deg: tri.min_parallax_deg,
        max_reprojection_px: tri.max_reprojection_px.max(4.0 * params.threshold),
    };
    let (pose, good) = decompositions(&e)
        .into_iter()
        .map(|p| {
            let g = count_well_conditioned(camera, &p, correspondences, &mask, &loose);
            (p, g)
        })
        .max_by_key(|(_, g)| *g)
        .ok_or(GeometryError::Degenerate("essential decomposition failed"))?;
    if good < 8 || 2 * good < inliers {
        return Err(GeometryError::Degenerate("insufficient parallax or cheirality support"));
    }
    Ok(EssentialEstimate { pose, inliers: mask, well_conditioned: good })
}
