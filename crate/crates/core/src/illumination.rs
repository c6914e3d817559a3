//! Phong-style diffuse intensity maps.
//!
//! Per pixel the surface point is unprojected from depth, the incident
//! direction runs from the light to the point, and the diffuse term is
//! `max(-<l_in, n>, 0)^gamma`. Pixels with invalid depth or normals get
//! intensity zero.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::Error;
use crate::prompt::LightPosition;
use crate::scene_io::{DepthMap, NormalMap};
use crate::Result;

/// Per-pixel diffuse intensity in `[0,1]` for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMap {
    pub width: u32,
    pub height: u32,
    /// Row-major, top-down.
    pub values: Vec<f64>,
    /// Exponent the map was computed with.
    pub gamma: f64,
}

impl IlluminationMap {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y as usize) * (self.width as usize) + (x as usize)]
    }

    /// Mean intensity of the left and right image halves.
    pub fn half_means(&self) -> (f64, f64) {
        let half = self.width / 2;
        let (mut left, mut right) = (0.0f64, 0.0f64);
        let (mut nl, mut nr) = (0usize, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if x < half {
                    left += self.get(x, y);
                    nl += 1;
                } else {
                    right += self.get(x, y);
                    nr += 1;
                }
            }
        }
        (left / nl.max(1) as f64, right / nr.max(1) as f64)
    }
}

/// The light producing incident directions: a point light at a camera-space
/// position, or a directional light with a fixed incident direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum LightModel {
    Point { position: [f64; 3] },
    Directional { direction: [f64; 3] },
}

impl LightModel {
    pub fn point(light: &LightPosition) -> Self {
        LightModel::Point {
            position: light.position,
        }
    }
}

/// Unit direction from the light toward the surface point.
pub fn incident_direction(
    view: &CameraView,
    pixel: [f64; 2],
    depth: f64,
    light: &LightPosition,
) -> Result<Vector3<f64>> {
    let surface = view.unproject(pixel, depth)?;
    let d = surface - light.vector();
    let norm = d.norm();
    if norm < 1e-12 {
        return Err(Error::Degenerate(
            "surface point coincides with the light position".into(),
        ));
    }
    Ok(d / norm)
}

/// Compute the diffuse intensity map for one view.
pub fn phong_diffuse(
    view: &CameraView,
    depth: &DepthMap,
    normals: &NormalMap,
    light: &LightModel,
    gamma: f64,
) -> Result<IlluminationMap> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if depth.width != view.width || depth.height != view.height {
        return Err(Error::Shape(format!(
            "depth {}x{} does not match view {}x{}",
            depth.width, depth.height, view.width, view.height
        )));
    }
    if normals.width != view.width || normals.height != view.height {
        return Err(Error::Shape(format!(
            "normals {}x{} do not match view {}x{}",
            normals.width, normals.height, view.width, view.height
        )));
    }

    let mut values = vec![0.0f64; (view.width as usize) * (view.height as usize)];
    for y in 0..view.height {
        for x in 0..view.width {
            if !depth.is_valid(x, y) || !normals.is_valid(x, y) {
                continue;
            }
            let l_in = match light {
                LightModel::Point { position } => {
                    let d = depth.get(x, y) as f64;
                    let surface = view
                        .unproject(CameraView::pixel_center(x, y), d)
                        .expect("valid depth is positive");
                    let dir = surface - Vector3::from_column_slice(position);
                    let norm = dir.norm();
                    if norm < 1e-12 {
                        continue; // surface point on the light itself
                    }
                    dir / norm
                }
                LightModel::Directional { direction } => {
                    let dir = Vector3::from_column_slice(direction);
                    let norm = dir.norm();
                    if norm < 1e-12 {
                        continue;
                    }
                    dir / norm
                }
            };
            let n = normals.get(x, y);
            let n = Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64);
            let lambert = (-l_in.dot(&n)).max(0.0);
            values[(y as usize) * (view.width as usize) + (x as usize)] = lambert.powf(gamma);
        }
    }
    Ok(IlluminationMap {
        width: view.width,
        height: view.height,
        values,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_view() -> CameraView {
        CameraView::new(
            0,
            32,
            32,
            40.0,
            40.0,
            16.0,
            16.0,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn straight_down_incidence() {
        let view = test_view();
        let light = LightPosition::new(Vector3::new(0.0, -1.0, 1.0));
        // Surface point (0,0,1) sits directly below the light.
        let dir = incident_direction(&view, [view.cx, view.cy], 1.0, &light).unwrap();
        assert!((dir - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn far_light_approaches_directional_limit() {
        let view = test_view();
        let light = LightPosition::new(Vector3::new(0.0, 0.0, -1e9));
        for &[px, py] in &[[2.0, 3.0], [30.0, 16.0], [16.0, 29.0]] {
            let dir = incident_direction(&view, [px, py], 2.0, &light).unwrap();
            assert!((dir - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn incident_direction_is_unit() {
        let view = test_view();
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..1000 {
            let light = LightPosition::new(Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ));
            let pixel = [rng.random_range(0.0..32.0), rng.random_range(0.0..32.0)];
            let depth = rng.random_range(0.2..20.0);
            match incident_direction(&view, pixel, depth, &light) {
                Ok(dir) => assert!((dir.norm() - 1.0).abs() < 1e-6),
                Err(Error::Degenerate(_)) => {}
                Err(e) => panic!("unexpected error {e:?}"),
            }
        }
    }

    #[test]
    fn coincident_light_is_degenerate() {
        let view = test_view();
        let surface = view.unproject([10.0, 10.0], 2.0).unwrap();
        let light = LightPosition::new(surface);
        assert!(matches!(
            incident_direction(&view, [10.0, 10.0], 2.0, &light),
            Err(Error::Degenerate(_))
        ));
    }

    /// Fronto-parallel plane facing the camera, light behind the camera on
    /// the principal ray: head-on incidence at the center pixel.
    #[test]
    fn head_on_incidence_gives_one() {
        let view = test_view();
        let depth = DepthMap::constant(32, 32, 2.0);
        let normals = NormalMap::constant(32, 32, [0.0, 0.0, -1.0]);
        for gamma in [0.5, 1.0, 2.0, 4.0] {
            let light = LightModel::Point {
                position: [0.0, 0.0, -3.0],
            };
            let map = phong_diffuse(&view, &depth, &normals, &light, gamma).unwrap();
            // Center of the principal pixel sits exactly on the principal ray.
            let center = map.get(15, 15).max(map.get(16, 16));
            // The pixel center is offset half a pixel from the axis; use the
            // directional model for the exact head-on case.
            let directional = LightModel::Directional {
                direction: [0.0, 0.0, 1.0],
            };
            let exact = phong_diffuse(&view, &depth, &normals, &directional, gamma).unwrap();
            assert!(exact.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
            assert!(center > 0.99);
        }
    }

    #[test]
    fn grazing_incidence_gives_zero() {
        let view = test_view();
        let depth = DepthMap::constant(32, 32, 2.0);
        // Normal perpendicular to the incident direction.
        let normals = NormalMap::constant(32, 32, [0.0, -1.0, 0.0]);
        let light = LightModel::Directional {
            direction: [1.0, 0.0, 0.0],
        };
        let map = phong_diffuse(&view, &depth, &normals, &light, 2.0).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_cosine_squares_to_quarter() {
        let view = test_view();
        let depth = DepthMap::constant(32, 32, 2.0);
        // cos(60 deg) = 0.5 between -l_in and n.
        let s = 3.0f32.sqrt() / 2.0;
        let normals = NormalMap::constant(32, 32, [s, 0.0, -0.5]);
        let light = LightModel::Directional {
            direction: [0.0, 0.0, 1.0],
        };
        let map = phong_diffuse(&view, &depth, &normals, &light, 2.0).unwrap();
        for &v in &map.values {
            assert!((v - 0.25).abs() < 1e-6, "got {v}");
        }
    }

    #[test]
    fn matches_per_pixel_brute_force() {
        let view = test_view();
        let mut rng = StdRng::seed_from_u64(5);
        let depth_values: Vec<f32> = (0..32 * 32).map(|_| rng.random_range(0.5..5.0)).collect();
        let depth = DepthMap::new(32, 32, depth_values);
        let normal_values: Vec<f32> = (0..32 * 32)
            .flat_map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0f64..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..-0.1),
                )
                .normalize();
                [v.x as f32, v.y as f32, v.z as f32]
            })
            .collect();
        let normals = NormalMap::new(32, 32, normal_values);
        let light_pos = Vector3::new(0.5, -1.0, 0.0);
        let gamma = 1.7;
        let map = phong_diffuse(
            &view,
            &depth,
            &normals,
            &LightModel::Point {
                position: [light_pos.x, light_pos.y, light_pos.z],
            },
            gamma,
        )
        .unwrap();
        for y in 0..32u32 {
            for x in 0..32u32 {
                let d = depth.get(x, y) as f64;
                let surface = Vector3::new(
                    (x as f64 + 0.5 - view.cx) / view.fx * d,
                    (y as f64 + 0.5 - view.cy) / view.fy * d,
                    d,
                );
                let l_in = (surface - light_pos).normalize();
                let n = normals.get(x, y);
                let n = Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64);
                let expected = (-l_in.dot(&n)).max(0.0).powf(gamma);
                assert!((map.get(x, y) - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gamma_monotonicity() {
        let view = test_view();
        let mut rng = StdRng::seed_from_u64(15);
        let depth = DepthMap::constant(32, 32, 3.0);
        let normal_values: Vec<f32> = (0..32 * 32)
            .flat_map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0f64..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..-0.1),
                )
                .normalize();
                [v.x as f32, v.y as f32, v.z as f32]
            })
            .collect();
        let normals = NormalMap::new(32, 32, normal_values);
        let light = LightModel::Point {
            position: [1.0, -2.0, -1.0],
        };
        let low = phong_diffuse(&view, &depth, &normals, &light, 1.0).unwrap();
        let high = phong_diffuse(&view, &depth, &normals, &light, 3.0).unwrap();
        for (a, b) in low.values.iter().zip(high.values.iter()) {
            assert!(a + 1e-12 >= *b, "gamma monotonicity violated: {a} < {b}");
        }
    }

    #[test]
    fn left_light_brightens_left_half() {
        let view = test_view();
        let depth = DepthMap::constant(32, 32, 4.0);
        let normals = NormalMap::constant(32, 32, [0.0, 0.0, -1.0]);
        let left = LightModel::Point {
            position: [-4.0, 0.0, 1.0],
        };
        let map = phong_diffuse(&view, &depth, &normals, &left, 2.0).unwrap();
        let (l, r) = map.half_means();
        assert!(l > r, "left {l} right {r}");

        let right = LightModel::Point {
            position: [4.0, 0.0, 1.0],
        };
        let map = phong_diffuse(&view, &depth, &normals, &right, 2.0).unwrap();
        let (l, r) = map.half_means();
        assert!(r > l, "left {l} right {r}");
    }

    #[test]
    fn invalid_pixels_are_zero_and_dimension_mismatch_errors() {
        let view = test_view();
        let mut depth = DepthMap::constant(32, 32, 2.0);
        depth.values[5] = 0.0;
        let normals = NormalMap::constant(32, 32, [0.0, 0.0, -1.0]);
        let light = LightModel::Directional {
            direction: [0.0, 0.0, 1.0],
        };
        let map = phong_diffuse(&view, &depth, &normals, &light, 2.0).unwrap();
        assert_eq!(map.values[5], 0.0);

        let bad = DepthMap::constant(16, 16, 2.0);
        assert!(matches!(
            phong_diffuse(&view, &bad, &normals, &light, 2.0),
            Err(Error::Shape(_))
        ));
    }
}
