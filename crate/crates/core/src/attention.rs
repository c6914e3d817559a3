//! Cross-view attention over key frames.
//!
//! Key frames attend to the concatenated keys/values of every frame in the
//! batch, which couples the per-view generations; non-key frames are filled
//! in afterwards by epipolar correspondence (see [`crate::correspondence`]).

use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::Error;
use crate::Result;

/// Dense feature grid for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub view_id: u32,
    pub height: u32,
    pub width: u32,
    pub dim: usize,
    /// Row-major, channel-interleaved.
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(view_id: u32, height: u32, width: u32, dim: usize) -> Self {
        FeatureMap {
            view_id,
            height,
            width,
            dim,
            data: vec![0.0; (height as usize) * (width as usize) * dim],
        }
    }

    pub fn pixel_count(&self) -> usize {
        (self.height as usize) * (self.width as usize)
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> &[f64] {
        let i = ((y as usize) * (self.width as usize) + (x as usize)) * self.dim;
        &self.data[i..i + self.dim]
    }

    #[inline]
    pub fn at_flat(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.dim..(pixel + 1) * self.dim]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, feature: &[f64]) {
        let i = ((y as usize) * (self.width as usize) + (x as usize)) * self.dim;
        self.data[i..i + self.dim].copy_from_slice(feature);
    }
}

/// Every `stride`-th view by ascending `view_id`; the first view is always a
/// key, so the set is nonempty.
pub fn select_key_frames(views: &[CameraView], stride: usize) -> Result<Vec<u32>> {
    if stride == 0 {
        return Err(Error::Domain("key-frame stride must be >= 1".into()));
    }
    if views.is_empty() {
        return Err(Error::Domain("key-frame selection needs >= 1 view".into()));
    }
    let mut ids: Vec<u32> = views.iter().map(|v| v.view_id).collect();
    ids.sort_unstable();
    Ok(ids.into_iter().step_by(stride).collect())
}

/// The key view whose camera center is closest to the view's; ties break
/// toward the lower `view_id`.
pub fn nearest_key_frame(view: &CameraView, keys: &[CameraView]) -> Result<u32> {
    if keys.is_empty() {
        return Err(Error::Domain("key set is empty".into()));
    }
    let center = view.camera_center();
    let mut best: Option<(f64, u32)> = None;
    for key in keys {
        let d = (key.camera_center() - center).norm();
        let candidate = (d, key.view_id);
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                if candidate.0 < cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    Ok(best.unwrap().1)
}

fn check_batch(maps: &[FeatureMap], dim: usize, height: u32, width: u32) -> Result<()> {
    for m in maps {
        if m.dim != dim {
            return Err(Error::Shape(format!(
                "feature dim mismatch: view {} has {}, expected {dim}",
                m.view_id, m.dim
            )));
        }
        if m.height != height || m.width != width {
            return Err(Error::Shape(format!(
                "feature grid mismatch: view {} is {}x{}, expected {width}x{height}",
                m.view_id, m.width, m.height
            )));
        }
    }
    Ok(())
}

/// Numerically stable softmax; rows sum to one exactly up to rounding, and
/// the result is invariant to adding a constant to every logit.
fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in logits.iter_mut() {
        *v *= inv;
    }
}

/// Scaled dot-product attention of one frame's queries over the
/// concatenated keys/values of all frames.
pub fn cross_view_attention(
    queries: &[FeatureMap],
    keys: &[FeatureMap],
    values: &[FeatureMap],
    frame: usize,
) -> Result<FeatureMap> {
    if queries.len() != keys.len() || keys.len() != values.len() {
        return Err(Error::Shape(format!(
            "frame counts differ: {} queries, {} keys, {} values",
            queries.len(),
            keys.len(),
            values.len()
        )));
    }
    let q = queries
        .get(frame)
        .ok_or_else(|| Error::Shape(format!("frame {frame} out of range")))?;
    let dim = q.dim;
    check_batch(queries, dim, q.height, q.width)?;
    check_batch(keys, dim, q.height, q.width)?;
    check_batch(values, dim, q.height, q.width)?;

    let per_frame = q.pixel_count();
    let total = per_frame * keys.len();
    let scale = 1.0 / (dim as f64).sqrt();

    let mut out = FeatureMap::new(q.view_id, q.height, q.width, dim);
    out.data
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(pixel, out_feat)| {
            let query = q.at_flat(pixel);
            let mut weights = vec![0.0f64; total];
            for (f, key_map) in keys.iter().enumerate() {
                for p in 0..per_frame {
                    let key = key_map.at_flat(p);
                    let dot: f64 = query.iter().zip(key.iter()).map(|(a, b)| a * b).sum();
                    weights[f * per_frame + p] = dot * scale;
                }
            }
            softmax_in_place(&mut weights);
            for (f, value_map) in values.iter().enumerate() {
                for p in 0..per_frame {
                    let w = weights[f * per_frame + p];
                    let value = value_map.at_flat(p);
                    for (o, v) in out_feat.iter_mut().zip(value.iter()) {
                        *o += w * v;
                    }
                }
            }
        });
    Ok(out)
}
