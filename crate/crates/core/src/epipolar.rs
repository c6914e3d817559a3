//! Two-view epipolar algebra for calibrated cameras.
//!
//! The fundamental matrix is computed analytically from the known poses
//! (`F = K_dst^{-T} [t]x R K_src^{-1}`), never estimated from
//! correspondences. Because `F` is defined only up to scale it can carry
//! arbitrarily large magnitudes; [`normalize_fundamental`] rescales it to
//! (near) unit Frobenius norm, which is what keeps reduced-precision
//! residual computation inside representable range.

use nalgebra::{Matrix3, Vector3};

use crate::camera::CameraView;
use crate::error::Error;
use crate::Result;

/// Default guard constant for [`normalize_fundamental`].
pub const EPSILON_DEFAULT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    pub matrix: Matrix3<f64>,
    /// Set once the matrix has been rescaled to unit norm.
    pub normalized: bool,
    /// Guard constant used (or to be used) in normalization.
    pub epsilon: f64,
}

/// A line `a*x + b*y + c = 0` in the pixel coordinates of the target view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarLine {
    pub coefficients: [f64; 3],
}

impl EpipolarLine {
    /// Perpendicular distance from a point to the line.
    pub fn distance(&self, point: [f64; 2]) -> f64 {
        let [a, b, c] = self.coefficients;
        (a * point[0] + b * point[1] + c).abs() / a.hypot(b)
    }

    /// Substitute `x -> x + dx, y -> y + dy`, shifting the line's coordinate
    /// frame. Used to move between pixel-center and pixel-index coordinates.
    pub fn shifted(&self, dx: f64, dy: f64) -> EpipolarLine {
        let [a, b, c] = self.coefficients;
        EpipolarLine {
            coefficients: [a, b, c + a * dx + b * dy],
        }
    }
}

fn cross_matrix(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Analytic fundamental matrix between two calibrated views, mapping source
/// pixels to epipolar lines in the destination view:
/// `p_dst^T F p_src = 0` for homogeneous pixels of any co-visible 3D point.
pub fn fundamental_matrix(src: &CameraView, dst: &CameraView) -> Result<FundamentalMatrix> {
    let c_src = src.camera_center();
    let c_dst = dst.camera_center();
    let baseline = (c_src - c_dst).norm();
    if baseline <= 1e-9 * (1.0 + c_src.norm().max(c_dst.norm())) {
        return Err(Error::Degenerate(format!(
            "views {} and {} share a camera center; epipolar constraint undefined",
            src.view_id, dst.view_id
        )));
    }
    // Relative pose taking src-camera coordinates into dst-camera coordinates.
    let rel_rot = dst.rotation * src.rotation.transpose();
    let rel_t = dst.translation - rel_rot * src.translation;
    let essential = cross_matrix(&rel_t) * rel_rot;
    let matrix =
        dst.inverse_intrinsic_matrix().transpose() * essential * src.inverse_intrinsic_matrix();
    Ok(FundamentalMatrix {
        matrix,
        normalized: false,
        epsilon: EPSILON_DEFAULT,
    })
}

/// Rescale to `F / (||F||_F + epsilon)`. Epipolar line directions are
/// unchanged; only the magnitude shrinks to (at most) one.
pub fn normalize_fundamental(f: &FundamentalMatrix, epsilon: f64) -> FundamentalMatrix {
    let norm = f.matrix.norm();
    FundamentalMatrix {
        matrix: f.matrix / (norm + epsilon),
        normalized: true,
        epsilon,
    }
}

impl FundamentalMatrix {
    pub fn from_matrix(matrix: Matrix3<f64>) -> Self {
        FundamentalMatrix {
            matrix,
            normalized: false,
            epsilon: EPSILON_DEFAULT,
        }
    }

    /// Rescale so the Frobenius norm becomes exactly `target`. Used by the
    /// overflow diagnostics to reproduce unnormalized magnitudes.
    pub fn with_norm(&self, target: f64) -> FundamentalMatrix {
        let norm = self.matrix.norm();
        if norm == 0.0 {
            return self.clone();
        }
        FundamentalMatrix {
            matrix: self.matrix * (target / norm),
            normalized: false,
            epsilon: self.epsilon,
        }
    }

    /// Re-express the constraint for coordinates scaled per axis:
    /// source pixels multiplied by `src_scale` and destination pixels by
    /// `dst_scale` recover the original coordinates. With
    /// `x_img = S x_grid` this is `F_grid = S_dst^T F S_src`.
    pub fn rescaled_coordinates(
        &self,
        src_scale: [f64; 2],
        dst_scale: [f64; 2],
    ) -> FundamentalMatrix {
        let s_src = Matrix3::new(
            src_scale[0],
            0.0,
            0.0,
            0.0,
            src_scale[1],
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let s_dst = Matrix3::new(
            dst_scale[0],
            0.0,
            0.0,
            0.0,
            dst_scale[1],
            0.0,
            0.0,
            0.0,
            1.0,
        );
        FundamentalMatrix {
            matrix: s_dst.transpose() * self.matrix * s_src,
            normalized: false,
            epsilon: self.epsilon,
        }
    }

    /// Scale the constraint from full image coordinates down to a feature
    /// grid of the given size (both views).
    pub fn for_feature_grid(
        &self,
        src_image: (u32, u32),
        dst_image: (u32, u32),
        grid: (u32, u32),
    ) -> FundamentalMatrix {
        self.rescaled_coordinates(
            [
                src_image.0 as f64 / grid.0 as f64,
                src_image.1 as f64 / grid.1 as f64,
            ],
            [
                dst_image.0 as f64 / grid.0 as f64,
                dst_image.1 as f64 / grid.1 as f64,
            ],
        )
    }
}

/// Epipolar line of a source pixel: coefficients `F * [u, v, 1]^T`, in the
/// same coordinate space as the input pixel.
pub fn epipolar_line(f: &FundamentalMatrix, pixel_src: [f64; 2]) -> Result<EpipolarLine> {
    let p = Vector3::new(pixel_src[0], pixel_src[1], 1.0);
    let l = f.matrix * p;
    // At the epipole the product vanishes and no line is defined.
    let scale = f.matrix.norm() * p.norm();
    if l[0].hypot(l[1]) <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!(
            "pixel ({}, {}) maps to a degenerate epipolar line",
            pixel_src[0], pixel_src[1]
        )));
    }
    Ok(EpipolarLine {
        coefficients: [l[0], l[1], l[2]],
    })
}

/// All integer pixels of the view within perpendicular distance `band` of
/// the line, ordered by position along the line. Empty when the line misses
/// the image entirely.
pub fn sample_epipolar_candidates(
    line: &EpipolarLine,
    width: u32,
    height: u32,
    band: f64,
) -> Vec<[u32; 2]> {
    debug_assert!(band >= 0.0);
    let [a, b, c] = line.coefficients;
    let inv_len = 1.0 / a.hypot(b);

    let mut hits: Vec<(f64, f64, [u32; 2])> = Vec::new();
    // Walk the tight axis range instead of the full grid: for each row (or
    // column, whichever the line crosses more steeply) solve for the span of
    // columns within the band.
    if b.abs() >= a.abs() {
        // Closer to horizontal: for each x, y ranges over a short interval.
        for x in 0..width {
            let xf = x as f64;
            // |a x + b y + c| <= band * hypot  =>  y in [lo, hi]
            let center = -(a * xf + c) / b;
            let spread = band / (b.abs() * inv_len);
            let lo = (center - spread).ceil().max(0.0) as i64;
            let hi = (center + spread).floor().min(height as f64 - 1.0) as i64;
            for y in lo..=hi {
                if y < 0 {
                    continue;
                }
                let yf = y as f64;
                let signed = (a * xf + b * yf + c) * inv_len;
                if signed.abs() <= band + 1e-12 {
                    let along = b * xf - a * yf;
                    hits.push((along, signed, [x, y as u32]));
                }
            }
        }
    } else {
        for y in 0..height {
            let yf = y as f64;
            let center = -(b * yf + c) / a;
            let spread = band / (a.abs() * inv_len);
            let lo = (center - spread).ceil().max(0.0) as i64;
            let hi = (center + spread).floor().min(width as f64 - 1.0) as i64;
            for x in lo..=hi {
                if x < 0 {
                    continue;
                }
                let xf = x as f64;
                let signed = (a * xf + b * yf + c) * inv_len;
                if signed.abs() <= band + 1e-12 {
                    let along = b * xf - a * yf;
                    hits.push((along, signed, [x as u32, y]));
                }
            }
        }
    }
    hits.sort_by(|p, q| {
        p.0.total_cmp(&q.0)
            .then(p.1.total_cmp(&q.1))
            .then(p.2.cmp(&q.2))
    });
    hits.into_iter().map(|(_, _, px)| px).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rotation_from_axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner()
    }

    fn view_with_pose(id: u32, rotation: Matrix3<f64>, translation: Vector3<f64>) -> CameraView {
        CameraView::new(id, 512, 512, 500.0, 480.0, 256.0, 250.0, rotation, translation).unwrap()
    }

    fn random_view(id: u32, rng: &mut StdRng) -> CameraView {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let rotation = rotation_from_axis_angle(axis, rng.random_range(-0.4..0.4));
        let translation = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
        );
        view_with_pose(id, rotation, translation)
    }

    fn flattened_cosine(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        dot / (a.norm() * b.norm())
    }

    #[test]
    fn rectified_stereo_has_canonical_form() {
        let src = view_with_pose(0, Matrix3::identity(), Vector3::zeros());
        let dst = view_with_pose(1, Matrix3::identity(), Vector3::new(-0.3, 0.0, 0.0));
        let f = fundamental_matrix(&src, &dst).unwrap();
        let canonical = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let cos = flattened_cosine(&f.matrix, &canonical);
        assert!(
            (cos.abs() - 1.0).abs() < 1e-9,
            "F not proportional to canonical rectified form, cos={cos}"
        );
    }

    #[test]
    fn identical_centers_are_degenerate() {
        let v = view_with_pose(0, Matrix3::identity(), Vector3::new(0.1, 0.2, 0.3));
        assert!(matches!(
            fundamental_matrix(&v, &v),
            Err(Error::Degenerate(_))
        ));
        // Same center, different orientation: still degenerate.
        let rotated = view_with_pose(
            1,
            rotation_from_axis_angle(Vector3::y(), 0.3),
            rotation_from_axis_angle(Vector3::y(), 0.3) * v.camera_center() * -1.0,
        );
        assert!((rotated.camera_center() - v.camera_center()).norm() < 1e-12);
        assert!(matches!(
            fundamental_matrix(&v, &rotated),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn random_projections_satisfy_constraint() {
        let mut rng = StdRng::seed_from_u64(11);
        for trial in 0..10 {
            let src = random_view(0, &mut rng);
            let dst = random_view(1, &mut rng);
            let f = normalize_fundamental(&fundamental_matrix(&src, &dst).unwrap(), 1e-12);
            let mut checked = 0;
            while checked < 50 {
                let point = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(2.0..8.0),
                );
                let (Some(p_src), Some(p_dst)) = (
                    src.project(&src.world_to_camera(&point)),
                    dst.project(&dst.world_to_camera(&point)),
                ) else {
                    continue;
                };
                let hp_src = Vector3::new(p_src[0], p_src[1], 1.0);
                let hp_dst = Vector3::new(p_dst[0], p_dst[1], 1.0);
                let residual =
                    (hp_dst.transpose() * f.matrix * hp_src)[0].abs() / (hp_src.norm() * hp_dst.norm());
                assert!(residual < 1e-6, "trial {trial}: residual {residual}");
                checked += 1;
            }
        }
    }

    #[test]
    fn fundamental_is_rank_two() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let src = random_view(0, &mut rng);
            let dst = random_view(1, &mut rng);
            let f = fundamental_matrix(&src, &dst).unwrap();
            let svals = f.matrix.svd(false, false).singular_values;
            assert!(svals[2] < 1e-6 * svals[0], "singular values {svals:?}");
        }
    }

    #[test]
    fn epipolar_symmetry_up_to_scale() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_view(0, &mut rng);
            let b = random_view(1, &mut rng);
            let f_ab = fundamental_matrix(&a, &b).unwrap();
            let f_ba = fundamental_matrix(&b, &a).unwrap();
            let cos = flattened_cosine(&f_ab.matrix, &f_ba.matrix.transpose());
            assert!((cos.abs() - 1.0).abs() < 1e-6, "cos={cos}");
        }
    }

    #[test]
    fn normalization_reaches_unit_norm() {
        let f = FundamentalMatrix::from_matrix(Matrix3::new(
            0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0,
        ))
        .with_norm(1e6);
        let n = normalize_fundamental(&f, 1e-8);
        assert!((n.matrix.norm() - 1.0).abs() < 1e-6);
        assert!(n.normalized);
    }

    #[test]
    fn normalizing_zero_matrix_is_safe() {
        let f = FundamentalMatrix::from_matrix(Matrix3::zeros());
        let n = normalize_fundamental(&f, 1e-8);
        assert_eq!(n.matrix, Matrix3::zeros());
    }

    #[test]
    fn normalization_is_idempotent_up_to_epsilon() {
        let mut rng = StdRng::seed_from_u64(17);
        let src = random_view(0, &mut rng);
        let dst = random_view(1, &mut rng);
        let eps = 1e-8;
        let once = normalize_fundamental(&fundamental_matrix(&src, &dst).unwrap(), eps);
        let twice = normalize_fundamental(&once, eps);
        assert!((twice.matrix - once.matrix).norm() <= 2.0 * eps);
    }

    #[test]
    fn rectified_line_is_horizontal() {
        let f = normalize_fundamental(
            &FundamentalMatrix::from_matrix(Matrix3::new(
                0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0,
            )),
            1e-12,
        );
        let line = epipolar_line(&f, [100.0, 37.0]).unwrap();
        let [a, b, c] = line.coefficients;
        assert!(a.abs() < 1e-12);
        assert!((-c / b - 37.0).abs() < 1e-9, "line is y = {}", -c / b);
    }

    #[test]
    fn true_correspondence_lies_on_line() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..10 {
            let src = random_view(0, &mut rng);
            let dst = random_view(1, &mut rng);
            let f = normalize_fundamental(&fundamental_matrix(&src, &dst).unwrap(), 1e-12);
            let mut checked = 0;
            while checked < 20 {
                let point = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(2.0..6.0),
                );
                let (Some(p_src), Some(p_dst)) = (
                    src.project(&src.world_to_camera(&point)),
                    dst.project(&dst.world_to_camera(&point)),
                ) else {
                    continue;
                };
                let line = epipolar_line(&f, p_src).unwrap();
                assert!(line.distance(p_dst) < 1e-4);
                checked += 1;
            }
        }
    }

    #[test]
    fn epipole_gives_degenerate_line() {
        let src = view_with_pose(0, Matrix3::identity(), Vector3::zeros());
        let dst = view_with_pose(
            1,
            rotation_from_axis_angle(Vector3::y(), 0.2),
            Vector3::new(0.1, 0.05, -0.4),
        );
        let f = normalize_fundamental(&fundamental_matrix(&src, &dst).unwrap(), 1e-12);
        // The source epipole spans the right null space of F.
        let svd = f.matrix.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let null = v_t.row(2);
        let epipole = [null[0] / null[2], null[1] / null[2]];
        assert!(matches!(
            epipolar_line(&f, epipole),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn horizontal_line_band_zero() {
        let line = EpipolarLine {
            coefficients: [0.0, 1.0, -10.0],
        };
        let candidates = sample_epipolar_candidates(&line, 32, 32, 0.0);
        assert_eq!(candidates.len(), 32);
        for (x, px) in candidates.iter().enumerate() {
            assert_eq!(*px, [x as u32, 10]);
        }
    }

    #[test]
    fn line_outside_image_gives_empty_set() {
        let line = EpipolarLine {
            coefficients: [0.0, 1.0, 100.0],
        };
        assert!(sample_epipolar_candidates(&line, 32, 32, 2.0).is_empty());
    }

    #[test]
    fn candidates_match_exhaustive_filter() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..50 {
            let line = EpipolarLine {
                coefficients: [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-40.0..40.0),
                ],
            };
            if line.coefficients[0].hypot(line.coefficients[1]) < 1e-3 {
                continue;
            }
            let band = rng.random_range(0.0..3.0);
            let fast = sample_epipolar_candidates(&line, 64, 64, band);
            let mut brute: Vec<[u32; 2]> = Vec::new();
            for y in 0..64u32 {
                for x in 0..64u32 {
                    if line.distance([x as f64, y as f64]) <= band + 1e-12 {
                        brute.push([x, y]);
                    }
                }
            }
            let mut fast_sorted = fast.clone();
            fast_sorted.sort();
            brute.sort();
            assert_eq!(fast_sorted, brute, "line {:?} band {band}", line.coefficients);
        }
    }

    #[test]
    fn candidate_order_follows_line_direction() {
        let line = EpipolarLine {
            coefficients: [1.0, -1.0, 0.0],
        };
        let candidates = sample_epipolar_candidates(&line, 16, 16, 0.1);
        let dir = |p: [u32; 2]| -1.0 * p[0] as f64 - 1.0 * p[1] as f64;
        for w in candidates.windows(2) {
            assert!(dir(w[0]) <= dir(w[1]));
        }
    }
}
