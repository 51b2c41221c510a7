use nalgebra::{Matrix3, Vector3};

use super::{GeometryError, Landmark3D, PoseSim3};

/// Least-squares similarity `B ≈ s R A + t` (Umeyama's closed form).
///
/// With `with_scale = false` the scale is fixed to one.
pub fn solve_sim3_umeyama(
    points_a: &[Landmark3D],
    points_b: &[Landmark3D],
    with_scale: bool,
) -> Result<PoseSim3, GeometryError> {
    if points_a.len() != points_b.len() || points_a.len() < 3 {
        return Err(GeometryError::InsufficientCorrespondences {
            needed: 3,
            got: points_a.len().min(points_b.len()),
        });
    }
    umeyama_svd(points_a, points_b, with_scale)
}

pub fn umeyama_svd(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
) -> Result<PoseSim3, GeometryError> {
    let n = src.len() as f64;
    let mean_src = src.iter().sum::<Vector3<f64>>() / n;
    let mean_dst = dst.iter().sum::<Vector3<f64>>() / n;

    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_src = 0.0;
    for (a, b) in src.iter().zip(dst) {
        let da = a - mean_src;
        let db = b - mean_dst;
        cross += db * da.transpose();
        scatter += da * da.transpose();
        var_src += da.norm_squared();
    }
    cross /= n;
    scatter /= n;
    var_src /= n;

    let spread = scatter.symmetric_eigenvalues();
    let mut ev = [spread[0], spread[1], spread[2]];
    ev.sort_by(|x, y| y.total_cmp(x));
    if ev[0] <= 1e-24 || ev[1] <= 1e-10 * ev[0] {
        return Err(GeometryError::Degenerate("collinear or coincident points"));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.ok_or(GeometryError::Degenerate("SVD failed"))?;
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("SVD failed"))?;
    let mut d = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot = u * d * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
        trace / var_src
    } else {
        1.0
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GeometryError::Degenerate("non-positive scale"));
    }
    let translation = mean_dst - scale * (rot * mean_src);
    let rotation = super::quaternion_from_matrix(&rot);
    Ok(PoseSim3::new(rotation, translation, scale))
}
