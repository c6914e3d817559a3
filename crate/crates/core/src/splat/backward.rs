//! Analytic gradients of the alpha-blending equation with respect to the
//! trainable color and opacity logits. Geometry receives no gradient.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::Error;
use crate::image_buf::RgbImageF;
use crate::Result;

use super::render::{prepare, RenderOptions};
use super::GaussianScene;

#[derive(Debug, Clone)]
pub struct SceneGradients {
    pub d_color_logit: Vec<Vector3<f64>>,
    pub d_opacity_logit: Vec<f64>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        SceneGradients {
            d_color_logit: vec![Vector3::zeros(); n],
            d_opacity_logit: vec![0.0; n],
        }
    }
}

struct TileGrads {
    /// (record index, dL/d activated color, dL/d activated opacity).
    entries: Vec<(usize, Vector3<f64>, f64)>,
}

/// Backpropagate a per-pixel color gradient through the blend.
///
/// Traverses exactly the contributor order (and early termination) of the
/// forward pass, so the returned gradients are the exact gradients of the
/// rendered function.
pub fn render_backward(
    scene: &GaussianScene,
    view: &CameraView,
    grad_color: &RgbImageF,
    options: &RenderOptions,
) -> Result<SceneGradients> {
    if grad_color.width != view.width || grad_color.height != view.height {
        return Err(Error::Shape(format!(
            "gradient image {}x{} does not match view {}x{}",
            grad_color.width, grad_color.height, view.width, view.height
        )));
    }
    if !grad_color.data.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite upstream gradient".into()));
    }
    let prep = prepare(scene, view, options.tile_size);
    let stop = options.early_stop.unwrap_or(0.0);
    let width = view.width;
    let height = view.height;

    let tile_grads: Vec<TileGrads> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let tx = (tile as u32) % prep.tiles_x;
            let ty = (tile as u32) / prep.tiles_x;
            let x0 = tx * prep.tile_size;
            let y0 = ty * prep.tile_size;
            let x1 = (x0 + prep.tile_size).min(width);
            let y1 = (y0 + prep.tile_size).min(height);
            let list = &prep.tiles[tile];

            // Dense accumulators over this tile's contributor list.
            let mut d_color_local = vec![Vector3::<f64>::zeros(); list.len()];
            let mut d_opacity_local = vec![0.0f64; list.len()];

            // Per-pixel contributor scratch, reused across pixels:
            // (list position, kernel weight, alpha, transmittance at entry).
            let mut hits: Vec<(usize, f64, f64, f64)> = Vec::new();
            for py in y0..y1 {
                for px in x0..x1 {
                    let cx = px as f64 + 0.5;
                    let cy = py as f64 + 0.5;
                    let g_pix = grad_color.get(px, py);
                    let g_vec = Vector3::new(g_pix[0], g_pix[1], g_pix[2]);

                    hits.clear();
                    let mut transmittance = 1.0f64;
                    for (pos, &slot) in list.iter().enumerate() {
                        let g = &prep.gaussians[slot as usize];
                        let weight = g.weight_at(cx, cy);
                        if weight == 0.0 {
                            continue;
                        }
                        let alpha = g.opacity * weight;
                        hits.push((pos, weight, alpha, transmittance));
                        transmittance *= 1.0 - alpha;
                        if transmittance < stop {
                            break;
                        }
                    }

                    // Back-to-front: `behind` is the color composited behind
                    // the current contributor, seen with unit transmittance
                    // at its own entry.
                    let mut behind = Vector3::<f64>::zeros();
                    for &(pos, weight, alpha, t_entry) in hits.iter().rev() {
                        let g = &prep.gaussians[list[pos] as usize];
                        // dC/dc_k = alpha_k T_k per channel.
                        d_color_local[pos] += g_vec * (alpha * t_entry);
                        // dC/dalpha_k = T_k (c_k - behind); alpha_k = opacity_k * w_k.
                        let d_alpha = g_vec.dot(&((g.color - behind) * t_entry));
                        d_opacity_local[pos] += d_alpha * weight;
                        behind = g.color * alpha + behind * (1.0 - alpha);
                    }
                }
            }

            let entries = list
                .iter()
                .enumerate()
                .filter(|(pos, _)| {
                    d_color_local[*pos] != Vector3::zeros() || d_opacity_local[*pos] != 0.0
                })
                .map(|(pos, &slot)| {
                    let g = &prep.gaussians[slot as usize];
                    (g.index, d_color_local[pos], d_opacity_local[pos])
                })
                .collect();
            TileGrads { entries }
        })
        .collect();

    // Sequential merge in tile order keeps the reduction bit-deterministic
    // regardless of thread count.
    let mut d_color_act = vec![Vector3::<f64>::zeros(); scene.len()];
    let mut d_opacity_act = vec![0.0f64; scene.len()];
    for tg in tile_grads {
        for (index, d_color, d_opacity) in tg.entries {
            d_color_act[index] += d_color;
            d_opacity_act[index] += d_opacity;
        }
    }

    // Chain through the logistic activations.
    let mut grads = SceneGradients::zeros(scene.len());
    for (i, record) in scene.records.iter().enumerate() {
        let op = record.activated_opacity();
        grads.d_opacity_logit[i] = d_opacity_act[i] * op * (1.0 - op);
        let c = record.activated_color();
        grads.d_color_logit[i] = Vector3::new(
            d_color_act[i].x * c.x * (1.0 - c.x),
            d_color_act[i].y * c.y * (1.0 - c.y),
            d_color_act[i].z * c.z * (1.0 - c.z),
        );
    }
    Ok(grads)
}
