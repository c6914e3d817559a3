//! Projection of 3D Gaussians onto the image plane (EWA local-affine
//! approximation).
//!
//! The constants below are part of the rendering contract: the brute-force
//! oracle used in tests replicates them exactly.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use crate::camera::CameraView;

use super::GaussianRecord;

/// Low-pass term added to the 2D covariance diagonal (px^2), guarding
/// against sub-pixel aliasing of tiny splats.
pub const LOW_PASS: f64 = 0.3;

/// Support cutoff on the 2D quadratic form: contributions with
/// `q = d^T Sigma_2d^-1 d > SUPPORT_Q` are zero (a 3-sigma ellipse).
pub const SUPPORT_Q: f64 = 9.0;

/// Gaussians closer than this camera-z are culled.
pub const NEAR_PLANE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    /// Index into the scene's record list.
    pub index: usize,
    /// Continuous pixel coordinates of the projected mean.
    pub mean: [f64; 2],
    /// Camera-space depth of the mean, used for the global sort.
    pub depth: f64,
    /// 2D covariance (xx, xy, yy), low-pass included.
    pub cov: [f64; 3],
    /// Inverse 2D covariance (xx, xy, yy).
    pub inv_cov: [f64; 3],
    pub color: Vector3<f64>,
    pub opacity: f64,
    /// Inclusive integer pixel bounds of the support ellipse.
    pub min_x: i64,
    pub max_x: i64,
    pub min_y: i64,
    pub max_y: i64,
}

impl ProjectedGaussian {
    /// Kernel weight at a continuous pixel position, zero outside the
    /// support ellipse.
    #[inline]
    pub fn weight_at(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let q = self.inv_cov[0] * dx * dx
            + 2.0 * self.inv_cov[1] * dx * dy
            + self.inv_cov[2] * dy * dy;
        if q > SUPPORT_Q {
            0.0
        } else {
            (-0.5 * q).exp()
        }
    }
}

/// Project one Gaussian into a view. Returns `None` when the Gaussian is
/// culled (behind the near plane, degenerate footprint, or support entirely
/// outside the image).
pub fn project_gaussian(
    record: &GaussianRecord,
    index: usize,
    view: &CameraView,
) -> Option<ProjectedGaussian> {
    let mean_cam = view.world_to_camera(&record.position);
    if mean_cam.z <= NEAR_PLANE || !mean_cam.z.is_finite() {
        return None;
    }
    let mean = view.project(&mean_cam)?;

    let sigma_world = record.covariance();
    let sigma_cam: Matrix3<f64> = view.rotation * sigma_world * view.rotation.transpose();

    let z_inv = 1.0 / mean_cam.z;
    let jac = Matrix2x3::new(
        view.fx * z_inv,
        0.0,
        -view.fx * mean_cam.x * z_inv * z_inv,
        0.0,
        view.fy * z_inv,
        -view.fy * mean_cam.y * z_inv * z_inv,
    );
    let sigma_2d: Matrix2<f64> = jac * sigma_cam * jac.transpose();
    let cov = [
        sigma_2d[(0, 0)] + LOW_PASS,
        sigma_2d[(0, 1)],
        sigma_2d[(1, 1)] + LOW_PASS,
    ];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    let inv_cov = [cov[2] * inv_det, -cov[1] * inv_det, cov[0] * inv_det];

    // Largest eigenvalue of the 2x2 covariance bounds the support radius.
    let mid = 0.5 * (cov[0] + cov[2]);
    let disc = (0.25 * (cov[0] - cov[2]).powi(2) + cov[1] * cov[1]).sqrt();
    let lambda_max = (mid + disc).max(0.0);
    let radius = SUPPORT_Q.sqrt() * lambda_max.sqrt();

    let min_x = (mean[0] - radius - 0.5).floor() as i64;
    let max_x = (mean[0] + radius - 0.5).ceil() as i64;
    let min_y = (mean[1] - radius - 0.5).floor() as i64;
    let max_y = (mean[1] + radius - 0.5).ceil() as i64;
    if max_x < 0 || max_y < 0 || min_x >= view.width as i64 || min_y >= view.height as i64 {
        return None;
    }

    Some(ProjectedGaussian {
        index,
        mean,
        depth: mean_cam.z,
        cov,
        inv_cov,
        color: record.activated_color(),
        opacity: record.activated_opacity(),
        min_x: min_x.max(0),
        max_x: max_x.min(view.width as i64 - 1),
        min_y: min_y.max(0),
        max_y: max_y.min(view.height as i64 - 1),
    })
}
