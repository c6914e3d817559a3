//! Pinhole camera model: one training view with intrinsics and a
//! world-to-camera pose in the OpenCV convention (x right, y down, z into
//! the screen).
//!
//! Continuous pixel coordinates are edge-anchored: the center of integer
//! pixel `(u, v)` sits at `(u + 0.5, v + 0.5)`, so coordinates span
//! `[0, width] x [0, height]`. All projection, unprojection, and epipolar
//! algebra use this convention.

use nalgebra::{Matrix3, Vector3};

use crate::error::Error;
use crate::Result;

/// Maximum allowed deviation of `R^T R` from identity when constructing a view.
pub const ROTATION_TOLERANCE: f64 = 1e-3;

/// Post-construction orthonormality guarantee.
const ROTATION_INVARIANT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
}

fn orthonormality_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r;
    let mut dev: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev
}

/// Project an approximately orthonormal matrix onto the nearest rotation.
fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
    u * v_t
}

impl CameraView {
    /// Build a view, enforcing all invariants. Rotations within
    /// [`ROTATION_TOLERANCE`] of orthonormal are snapped to the nearest
    /// rotation; anything worse (or a reflection) is rejected.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        view_id: u32,
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "view {view_id}: zero image dimension {width}x{height}"
            )));
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Validation(format!(
                "view {view_id}: focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::Validation(format!(
                "view {view_id}: principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!(
                "view {view_id}: non-finite pose"
            )));
        }
        let dev = orthonormality_deviation(&rotation);
        if dev > ROTATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "view {view_id}: rotation deviates from orthonormal by {dev:.3e}"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::Validation(format!(
                "view {view_id}: rotation has negative determinant (reflection)"
            )));
        }
        let rotation = if dev > ROTATION_INVARIANT {
            reorthonormalize(&rotation)
        } else {
            rotation
        };
        Ok(CameraView {
            view_id,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Camera center in world coordinates: `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Intrinsic matrix mapping camera coordinates to continuous pixel coordinates.
    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Project a camera-space point to continuous pixel coordinates.
    /// Returns `None` for points at or behind the camera plane.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<[f64; 2]> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some([
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ])
    }

    /// Lift a continuous pixel coordinate at the given camera-z depth back
    /// into camera coordinates.
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(Error::Domain(format!(
                "unproject requires depth > 0, got {depth}"
            )));
        }
        Ok(Vector3::new(
            (pixel[0] - self.cx) / self.fx * depth,
            (pixel[1] - self.cy) / self.fy * depth,
            depth,
        ))
    }

    /// Whether a continuous pixel coordinate falls inside the image area.
    pub fn contains(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0
            && pixel[0] <= self.width as f64
            && pixel[1] >= 0.0
            && pixel[1] <= self.height as f64
    }

    /// Continuous center coordinate of an integer pixel.
    #[inline]
    pub fn pixel_center(u: u32, v: u32) -> [f64; 2] {
        [u as f64 + 0.5, v as f64 + 0.5]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_view() -> CameraView {
        CameraView::new(
            0,
            512,
            512,
            500.0,
            500.0,
            256.0,
            256.0,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn principal_ray_unprojects_to_axis() {
        let view = test_view();
        let p = view.unproject([view.cx, view.cy], 3.0).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn one_focal_length_offset() {
        let view = test_view();
        let p = view.unproject([view.cx + view.fx, view.cy], 1.0).unwrap();
        assert!((p - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn nonpositive_depth_is_domain_error() {
        let view = test_view();
        assert!(matches!(
            view.unproject([10.0, 10.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            view.unproject([10.0, 10.0], -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn project_unproject_round_trip() {
        let view = test_view();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let pixel = [
                rng.random_range(0.0..view.width as f64),
                rng.random_range(0.0..view.height as f64),
            ];
            let depth = rng.random_range(0.1..50.0);
            let p_cam = view.unproject(pixel, depth).unwrap();
            let back = view.project(&p_cam).unwrap();
            assert!(
                (back[0] - pixel[0]).abs() < 1e-6 && (back[1] - pixel[1]).abs() < 1e-6,
                "round trip drifted: {pixel:?} -> {back:?}"
            );
        }
    }

    #[test]
    fn slightly_skewed_rotation_is_snapped() {
        let mut r = Matrix3::identity();
        r[(0, 1)] = 1e-4;
        let view = CameraView::new(1, 64, 64, 50.0, 50.0, 32.0, 32.0, r, Vector3::zeros()).unwrap();
        assert!(orthonormality_deviation(&view.rotation) < 1e-9);
    }

    #[test]
    fn reflection_rejected() {
        let mut r = Matrix3::identity();
        r[(2, 2)] = -1.0;
        let err = CameraView::new(1, 64, 64, 50.0, 50.0, 32.0, 32.0, r, Vector3::zeros());
        assert!(matches!(err, Err(Error::Validation(_))));
    }
}
