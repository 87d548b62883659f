//! Screen-space projection of world Gaussians (EWA local-affine approximation).

use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;
use serde::Serialize;

use crate::scene::{covariance_of, Camera, Gaussian3D, Scene};

/// Added to both diagonal entries of the projected covariance.
pub const DILATION: f64 = 0.3;
/// Floor on the eigenvalues of the projected covariance.
pub const MIN_EIGENVALUE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedGaussian {
    /// Index of the Gaussian in its scene.
    pub source: usize,
    pub mean2d: [f64; 2],
    /// `(s11, s12, s22)` of the symmetric inverse covariance.
    pub inv_cov: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Half side of the axis-aligned coverage square, in pixels.
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejection {
    BehindNearPlane,
    Degenerate,
}

/// Counters gathered while projecting a scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ProjectionDiagnostics {
    pub input: usize,
    pub projected: usize,
    pub behind_near_plane: usize,
    pub degenerate: usize,
}

/// Closed-form inverse of a symmetric 2x2 matrix `[[a, b], [b, c]]`, or
/// `None` when the determinant is not positive.
pub fn invert_cov2(a: f64, b: f64, c: f64) -> Option<[f64; 3]> {
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    Some([c / det, -b / det, a / det])
}

/// Eigenvalues `(max, min)` of a symmetric 2x2 matrix.
pub fn eigenvalues2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mid + rad, mid - rad)
}

/// Raise every eigenvalue of `[[a, b], [b, c]]` below `floor` to `floor`,
/// leaving the matrix untouched if none is.
fn clamp_eigenvalues(a: f64, b: f64, c: f64, floor: f64) -> [f64; 3] {
    let (hi, lo) = eigenvalues2(a, b, c);
    if lo >= floor {
        return [a, b, c];
    }
    if hi <= floor {
        return [floor, 0.0, floor];
    }
    // Unit eigenvector of `lo`.
    let (ex, ey) = if (a - lo).abs() >= (c - lo).abs() {
        (-b, a - lo)
    } else {
        (c - lo, -b)
    };
    let n2 = ex * ex + ey * ey;
    if n2 == 0.0 {
        return [a.max(floor), b, c.max(floor)];
    }
    let k = (floor - lo) / n2;
    [a + k * ex * ex, b + k * ex * ey, c + k * ey * ey]
}

pub fn try_project(
    index: usize,
    g: &Gaussian3D,
    cam: &Camera,
) -> Result<ProjectedGaussian, Rejection> {
    let t = cam.to_camera_space(g.mean);
    let (x, y, z) = (t.x, t.y, t.z);
    if !(z > cam.near) {
        return Err(Rejection::BehindNearPlane);
    }
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let m = j * cam.rotation();
    let cov3 = covariance_of(g);
    let cov2: Matrix2<f64> = m * cov3 * m.transpose();
    let a = cov2[(0, 0)] + DILATION;
    let b = 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]);
    let c = cov2[(1, 1)] + DILATION;
    if !(a * c - b * b > 0.0) {
        return Err(Rejection::Degenerate);
    }
    let [a, b, c] = clamp_eigenvalues(a, b, c, MIN_EIGENVALUE);
    let inv_cov = invert_cov2(a, b, c).ok_or(Rejection::Degenerate)?;
    let (hi, _) = eigenvalues2(a, b, c);
    let radius = (3.0 * hi.sqrt()).ceil();
    if !radius.is_finite() {
        return Err(Rejection::Degenerate);
    }
    Ok(ProjectedGaussian {
        source: index,
        mean2d: [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy],
        inv_cov,
        depth: z,
        opacity: g.opacity,
        color: g.color,
        radius,
    })
}

/// Project one Gaussian; `None` if it lies behind the near plane or its
/// screen covariance is singular.
pub fn project(g: &Gaussian3D, cam: &Camera) -> Option<ProjectedGaussian> {
    try_project(0, g, cam).ok()
}

/// Project every Gaussian of a scene, keeping scene order.
pub fn project_scene(scene: &Scene, cam: &Camera) -> (Vec<ProjectedGaussian>, ProjectionDiagnostics) {
    let results: Vec<_> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| try_project(i, g, cam))
        .collect();
    let mut diag = ProjectionDiagnostics { input: results.len(), ..Default::default() };
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => out.push(p),
            Err(Rejection::BehindNearPlane) => diag.behind_near_plane += 1,
            Err(Rejection::Degenerate) => diag.degenerate += 1,
        }
    }
    diag.projected = out.len();
    (out, diag)
}
