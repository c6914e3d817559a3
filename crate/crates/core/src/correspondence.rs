//! Epipolar-constrained correspondence between a non-key feature map and its
//! nearest key frame, plus the overflow diagnostics for reduced precision.
//!
//! Matching minimizes cosine distance along the epipolar line of each
//! non-key pixel. In reduced-precision mode the epipolar residual
//! `p_v^T F p_u` is evaluated in emulated binary16; when the chain produces
//! a non-finite value the constraint is unusable and the pixel degrades to a
//! global argmin over the whole key map, which is exactly the failure mode
//! unnormalized fundamental matrices trigger.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::FeatureMap;
use crate::epipolar::{epipolar_line, sample_epipolar_candidates, FundamentalMatrix};
use crate::error::Error;
use crate::precision::{round_f16, PrecisionMode};
use crate::Result;

/// Per-pixel match from a non-key view into its key view.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub source_view_id: u32,
    pub key_view_id: u32,
    pub width: u32,
    pub height: u32,
    /// Matched key-view pixel per source pixel; `None` is the unmatched
    /// sentinel.
    pub entries: Vec<Option<[u32; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionOverflow {
    /// Feature-grid side length this entry aggregates.
    pub size: u32,
    pub total: u64,
    pub overflowed: u64,
    pub rate: f64,
}

/// Overflow statistics, aggregated per feature resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverflowReport {
    pub resolutions: Vec<ResolutionOverflow>,
    pub avg_rate: f64,
}

impl OverflowReport {
    pub fn single(size: u32, total: u64, overflowed: u64) -> Self {
        let rate = if total == 0 {
            0.0
        } else {
            overflowed as f64 / total as f64
        };
        OverflowReport {
            resolutions: vec![ResolutionOverflow {
                size,
                total,
                overflowed,
                rate,
            }],
            avg_rate: rate,
        }
    }

    /// Merge by summing counts per resolution; associative and
    /// order-independent.
    pub fn merge(reports: impl IntoIterator<Item = OverflowReport>) -> Self {
        let mut by_size: std::collections::BTreeMap<u32, (u64, u64)> =
            std::collections::BTreeMap::new();
        for report in reports {
            for r in report.resolutions {
                let e = by_size.entry(r.size).or_insert((0, 0));
                e.0 += r.total;
                e.1 += r.overflowed;
            }
        }
        let resolutions: Vec<ResolutionOverflow> = by_size
            .into_iter()
            .map(|(size, (total, overflowed))| ResolutionOverflow {
                size,
                total,
                overflowed,
                rate: if total == 0 {
                    0.0
                } else {
                    overflowed as f64 / total as f64
                },
            })
            .collect();
        let avg_rate = if resolutions.is_empty() {
            0.0
        } else {
            resolutions.iter().map(|r| r.rate).sum::<f64>() / resolutions.len() as f64
        };
        OverflowReport {
            resolutions,
            avg_rate,
        }
    }
}

/// Cosine distance `1 - cos(a, b)`. Zero-norm vectors are defined to be at
/// distance one from everything, which keeps the argmin deterministic.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na <= 0.0 || nb <= 0.0 {
        return 1.0;
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

/// Evaluate `p_v^T F p_u` with every intermediate rounded through binary16.
/// Returns `None` when any intermediate is non-finite (overflow).
fn residual_f16(f: &FundamentalMatrix, p_u: [f64; 3], p_v: [f64; 3]) -> Option<f64> {
    fn step(ok: &mut bool, x: f64) -> f64 {
        let v = round_f16(x);
        *ok &= v.is_finite();
        v
    }
    let mut ok = true;
    let u = [
        step(&mut ok, p_u[0]),
        step(&mut ok, p_u[1]),
        step(&mut ok, p_u[2]),
    ];
    let mut line = [0.0f64; 3];
    #[allow(clippy::needless_range_loop)]
    for i in 0..3 {
        let f0 = step(&mut ok, f.matrix[(i, 0)]);
        let f1 = step(&mut ok, f.matrix[(i, 1)]);
        let f2 = step(&mut ok, f.matrix[(i, 2)]);
        let m0 = step(&mut ok, f0 * u[0]);
        let m1 = step(&mut ok, f1 * u[1]);
        let m2 = step(&mut ok, f2 * u[2]);
        let s = step(&mut ok, m0 + m1);
        line[i] = step(&mut ok, s + m2);
    }
    let v0 = step(&mut ok, p_v[0]);
    let v1 = step(&mut ok, p_v[1]);
    let v2 = step(&mut ok, p_v[2]);
    let t0 = step(&mut ok, v0 * line[0]);
    let t1 = step(&mut ok, v1 * line[1]);
    let t2 = step(&mut ok, v2 * line[2]);
    let s = step(&mut ok, t0 + t1);
    let total = step(&mut ok, s + t2);
    if ok {
        Some(total)
    } else {
        None
    }
}

fn global_argmin(feature: &[f64], key: &FeatureMap) -> Option<[u32; 2]> {
    let mut best: Option<(f64, usize)> = None;
    for p in 0..key.pixel_count() {
        let d = cosine_distance(feature, key.at_flat(p));
        match best {
            Some((bd, _)) if bd <= d => {}
            _ => best = Some((d, p)),
        }
    }
    best.map(|(_, p)| {
        let w = key.width as usize;
        [(p % w) as u32, (p / w) as u32]
    })
}

/// Match every non-key pixel to its best key-view pixel along the epipolar
/// line. `f` must already be expressed in the feature-grid coordinates of
/// the two maps (see [`FundamentalMatrix::for_feature_grid`]).
pub fn epipolar_correspondence(
    nonkey: &FeatureMap,
    key: &FeatureMap,
    f: &FundamentalMatrix,
    band: f64,
    mode: PrecisionMode,
) -> Result<(CorrespondenceMap, OverflowReport)> {
    if nonkey.dim != key.dim {
        return Err(Error::Shape(format!(
            "feature dims differ: {} vs {}",
            nonkey.dim, key.dim
        )));
    }
    if band < 0.0 {
        return Err(Error::Domain(format!("band must be >= 0, got {band}")));
    }

    let width = nonkey.width;
    let results: Vec<(Option<[u32; 2]>, bool)> = (0..nonkey.pixel_count())
        .into_par_iter()
        .map(|pixel| {
            let u = (pixel as u32) % width;
            let v = (pixel as u32) / width;
            let feature = nonkey.at_flat(pixel);
            // Pixel-center homogeneous coordinates.
            let p_u = [u as f64 + 0.5, v as f64 + 0.5, 1.0];
            let Ok(line) = epipolar_line(f, [p_u[0], p_u[1]]) else {
                return (None, false); // epipole: no constraint, unmatched
            };
            // The line lives in center coordinates; candidates are indexed
            // by integer pixel, so shift into index space.
            let index_line = line.shifted(0.5, 0.5);
            let candidates = sample_epipolar_candidates(&index_line, key.width, key.height, band);
            if candidates.is_empty() {
                return (None, false);
            }

            let mut overflowed = false;
            if mode == PrecisionMode::Reduced {
                for c in &candidates {
                    let p_v = [c[0] as f64 + 0.5, c[1] as f64 + 0.5, 1.0];
                    if residual_f16(f, p_u, p_v).is_none() {
                        overflowed = true;
                        break;
                    }
                }
                if overflowed {
                    // The constraint set is numerically unusable; degrade to
                    // unconstrained global matching.
                    return (global_argmin(feature, key), true);
                }
            }

            let mut best: Option<(f64, [u32; 2])> = None;
            for c in &candidates {
                let kf = key.at_flat((c[1] as usize) * (key.width as usize) + c[0] as usize);
                let d = cosine_distance(feature, kf);
                match best {
                    Some((bd, _)) if bd <= d => {}
                    _ => best = Some((d, *c)),
                }
            }
            (best.map(|(_, c)| c), false)
        })
        .collect();

    let mut entries = Vec::with_capacity(results.len());
    let mut overflow_count = 0u64;
    for (entry, overflowed) in results {
        entries.push(entry);
        overflow_count += overflowed as u64;
    }
    let report = OverflowReport::single(nonkey.width, nonkey.pixel_count() as u64, overflow_count);
    Ok((
        CorrespondenceMap {
            source_view_id: nonkey.view_id,
            key_view_id: key.view_id,
            width: nonkey.width,
            height: nonkey.height,
            entries,
        },
        report,
    ))
}

/// Fill a non-key feature map from the key view's attention output: matched
/// pixels copy the key feature at their matched coordinate, unmatched pixels
/// keep the fallback.
pub fn propagate_features(
    key_output: &FeatureMap,
    corr: &CorrespondenceMap,
    fallback: &FeatureMap,
) -> Result<FeatureMap> {
    if corr.key_view_id != key_output.view_id {
        return Err(Error::Validation(format!(
            "correspondence targets key view {} but output is for view {}",
            corr.key_view_id, key_output.view_id
        )));
    }
    if fallback.width != corr.width || fallback.height != corr.height {
        return Err(Error::Shape(format!(
            "fallback {}x{} does not match correspondence {}x{}",
            fallback.width, fallback.height, corr.width, corr.height
        )));
    }
    if key_output.dim != fallback.dim {
        return Err(Error::Shape(format!(
            "feature dims differ: {} vs {}",
            key_output.dim, fallback.dim
        )));
    }
    let mut out = FeatureMap::new(corr.source_view_id, corr.height, corr.width, fallback.dim);
    for y in 0..corr.height {
        for x in 0..corr.width {
            let idx = (y as usize) * (corr.width as usize) + (x as usize);
            let feature = match corr.entries[idx] {
                Some([kx, ky]) => key_output.at(kx, ky),
                None => fallback.at(x, y),
            };
            out.set(x, y, feature);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraView;
    use crate::epipolar::{fundamental_matrix, normalize_fundamental};
    use nalgebra::{Matrix3, Vector3};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grid_view(id: u32, size: u32, translation: Vector3<f64>) -> CameraView {
        CameraView::new(
            id,
            size,
            size,
            size as f64 * 0.9,
            size as f64 * 0.9,
            size as f64 / 2.0,
            size as f64 / 2.0,
            Matrix3::identity(),
            translation,
        )
        .unwrap()
    }

    /// Smooth, distinctive feature of a plane point.
    fn plane_feature(s: f64, t: f64, dim: usize) -> Vec<f64> {
        let mut f = Vec::with_capacity(dim);
        f.push(s);
        f.push(t);
        for k in 0..dim.saturating_sub(2) {
            let freq = 1.3 + k as f64 * 0.7;
            f.push(1.0 + (freq * s + 0.3 * t).sin() * 0.5 + (freq * t).cos() * 0.25);
        }
        f
    }

    /// Two views of the textured plane z = depth, with per-pixel ground
    /// truth projections of non-key pixels into the key view.
    fn plane_pair(
        size: u32,
        depth: f64,
    ) -> (FeatureMap, FeatureMap, FundamentalMatrix, Vec<Option<[f64; 2]>>) {
        let dim = 5;
        let key_view = grid_view(0, size, Vector3::zeros());
        let nonkey_view = grid_view(1, size, Vector3::new(-0.6, 0.15, 0.0));
        let mut key = FeatureMap::new(0, size, size, dim);
        let mut nonkey = FeatureMap::new(1, size, size, dim);
        let mut truth = Vec::with_capacity((size * size) as usize);
        for y in 0..size {
            for x in 0..size {
                let center = CameraView::pixel_center(x, y);
                // Key view: plane point seen by this pixel.
                let pk = key_view.unproject(center, depth).unwrap();
                let world = key_view.camera_to_world(&pk);
                key.set(x, y, &plane_feature(world.x, world.y, dim));
                // Non-key view: plane point along this pixel's ray, at the
                // camera-z where the ray meets the world plane z = depth.
                let dir = nonkey_view.unproject(center, 1.0).unwrap();
                let origin = nonkey_view.camera_center();
                let t = (depth - origin.z) / dir.z;
                let world_n = origin + dir * t;
                nonkey.set(x, y, &plane_feature(world_n.x, world_n.y, dim));
                truth.push(key_view.project(&key_view.world_to_camera(&world_n)));
            }
        }
        let truth = truth
            .into_iter()
            .map(|p| {
                p.filter(|p| {
                    p[0] >= 0.0 && p[0] <= size as f64 && p[1] >= 0.0 && p[1] <= size as f64
                })
            })
            .collect();
        let f = fundamental_matrix(&nonkey_view, &key_view).unwrap();
        (nonkey, key, f, truth)
    }

    #[test]
    fn plane_matching_is_accurate() {
        let size = 48;
        let (nonkey, key, f, truth) = plane_pair(size, 5.0);
        let f = normalize_fundamental(&f, 1e-8);
        let (corr, report) =
            epipolar_correspondence(&nonkey, &key, &f, 2.0, PrecisionMode::Full).unwrap();
        assert_eq!(report.avg_rate, 0.0);
        let mut matched = 0usize;
        let mut close = 0usize;
        for (entry, gt) in corr.entries.iter().zip(truth.iter()) {
            let (Some(m), Some(gt)) = (entry, gt) else {
                continue;
            };
            matched += 1;
            let dx = m[0] as f64 + 0.5 - gt[0];
            let dy = m[1] as f64 + 0.5 - gt[1];
            if dx.hypot(dy) <= 2.0 {
                close += 1;
            }
        }
        assert!(matched > (size * size / 2) as usize, "matched {matched}");
        assert!(
            close as f64 >= 0.95 * matched as f64,
            "{close}/{matched} within 2px"
        );
    }

    #[test]
    fn full_precision_is_scale_invariant() {
        let (nonkey, key, f, _) = plane_pair(24, 4.0);
        let (a, _) = epipolar_correspondence(&nonkey, &key, &f, 2.0, PrecisionMode::Full).unwrap();
        let scaled = f.with_norm(f.matrix.norm() * 1e6);
        let (b, _) =
            epipolar_correspondence(&nonkey, &key, &scaled, 2.0, PrecisionMode::Full).unwrap();
        assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn reduced_mode_overflows_without_normalization() {
        let (nonkey, key, f, _) = plane_pair(32, 4.0);
        let huge = f.with_norm(1e6);
        let (corr, report) =
            epipolar_correspondence(&nonkey, &key, &huge, 2.0, PrecisionMode::Reduced).unwrap();
        assert!(
            report.avg_rate > 0.3,
            "expected heavy overflow, rate {}",
            report.avg_rate
        );
        // Overflowed pixels degrade to global matching, not to unmatched.
        assert!(corr.entries.iter().any(|e| e.is_some()));

        let normalized = normalize_fundamental(&huge, 1e-8);
        let (_, report) =
            epipolar_correspondence(&nonkey, &key, &normalized, 2.0, PrecisionMode::Reduced)
                .unwrap();
        assert_eq!(report.avg_rate, 0.0);
    }

    #[test]
    fn overflowed_pixels_use_global_argmin() {
        let (nonkey, key, f, _) = plane_pair(16, 4.0);
        let huge = f.with_norm(1e7);
        let (corr, report) =
            epipolar_correspondence(&nonkey, &key, &huge, 2.0, PrecisionMode::Reduced).unwrap();
        assert!(report.avg_rate > 0.9);
        for (pixel, entry) in corr.entries.iter().enumerate() {
            let Some(m) = entry else { continue };
            let expected = global_argmin(nonkey.at_flat(pixel), &key).unwrap();
            assert_eq!(*m, expected);
        }
    }

    #[test]
    fn cosine_distance_properties() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = cosine_distance(&a, &b);
            assert!((0.0..=2.0).contains(&d));
            // Invariant to positive rescaling of either argument.
            let a2: Vec<f64> = a.iter().map(|v| v * 37.5).collect();
            let b2: Vec<f64> = b.iter().map(|v| v * 0.004).collect();
            assert!((cosine_distance(&a2, &b).clamp(0.0, 2.0) - d).abs() < 1e-9);
            assert!((cosine_distance(&a, &b2).clamp(0.0, 2.0) - d).abs() < 1e-9);
        }
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]), 1.0);
    }

    #[test]
    fn report_merge_is_order_independent() {
        let a = OverflowReport::single(64, 4096, 1000);
        let b = OverflowReport::single(32, 1024, 0);
        let c = OverflowReport::single(64, 4096, 96);
        let ab_c = OverflowReport::merge([a.clone(), b.clone(), c.clone()]);
        let c_ba = OverflowReport::merge([c, b, a]);
        assert_eq!(ab_c, c_ba);
        let by64 = ab_c.resolutions.iter().find(|r| r.size == 64).unwrap();
        assert_eq!(by64.total, 8192);
        assert_eq!(by64.overflowed, 1096);
    }

    #[test]
    fn propagate_identity_and_fallback() {
        let mut rng = StdRng::seed_from_u64(6);
        let dim = 3;
        let mut key_output = FeatureMap::new(7, 16, 16, dim);
        let mut fallback = FeatureMap::new(2, 16, 16, dim);
        for v in key_output.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in fallback.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }

        let identity = CorrespondenceMap {
            source_view_id: 2,
            key_view_id: 7,
            width: 16,
            height: 16,
            entries: (0..256).map(|i| Some([(i % 16) as u32, (i / 16) as u32])).collect(),
        };
        let out = propagate_features(&key_output, &identity, &fallback).unwrap();
        assert_eq!(out.data, key_output.data);

        let unmatched = CorrespondenceMap {
            entries: vec![None; 256],
            ..identity.clone()
        };
        let out = propagate_features(&key_output, &unmatched, &fallback).unwrap();
        assert_eq!(out.data, fallback.data);
    }

    #[test]
    fn propagate_mixed_matches_manual_assembly() {
        let mut rng = StdRng::seed_from_u64(61);
        let dim = 2;
        let mut key_output = FeatureMap::new(1, 16, 16, dim);
        let mut fallback = FeatureMap::new(5, 16, 16, dim);
        for v in key_output.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in fallback.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let entries: Vec<Option<[u32; 2]>> = (0..256)
            .map(|_| {
                if rng.random_bool(0.5) {
                    Some([rng.random_range(0..16), rng.random_range(0..16)])
                } else {
                    None
                }
            })
            .collect();
        let corr = CorrespondenceMap {
            source_view_id: 5,
            key_view_id: 1,
            width: 16,
            height: 16,
            entries: entries.clone(),
        };
        let out = propagate_features(&key_output, &corr, &fallback).unwrap();
        for y in 0..16u32 {
            for x in 0..16u32 {
                let expected = match entries[(y * 16 + x) as usize] {
                    Some([kx, ky]) => key_output.at(kx, ky),
                    None => fallback.at(x, y),
                };
                assert_eq!(out.at(x, y), expected);
            }
        }
    }
}
