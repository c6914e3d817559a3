//! Tile-based forward rasterization with front-to-back alpha blending.

use rayon::prelude::*;

use crate::camera::CameraView;
use crate::image_buf::RgbImageF;

use super::project::{project_gaussian, ProjectedGaussian};
use super::GaussianScene;

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Side length of the square tiles pixels are grouped into.
    pub tile_size: u32,
    /// Stop blending once transmittance drops below this value. `None`
    /// disables early termination (used by gradient checks).
    pub early_stop: Option<f64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            tile_size: 16,
            early_stop: Some(1e-4),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: RgbImageF,
    /// Accumulated opacity (1 - final transmittance) per pixel.
    pub alpha: Vec<f64>,
    /// Number of blended contributors per pixel.
    pub contributors: Vec<u32>,
}

/// Depth-sorted projection plus per-tile index lists. Shared by the forward
/// and backward passes so both traverse identical contributor orders.
pub(super) struct Prepared {
    pub gaussians: Vec<ProjectedGaussian>,
    /// Indices into `gaussians`, in depth order, per tile (row-major tiles).
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: u32,
    pub tile_size: u32,
}

pub(super) fn prepare(scene: &GaussianScene, view: &CameraView, tile_size: u32) -> Prepared {
    let mut gaussians: Vec<ProjectedGaussian> = scene
        .records
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, view))
        .collect();
    // Global front-to-back order; ties broken by record index so the result
    // is independent of input permutation only up to genuinely equal depths.
    gaussians.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let tiles_x = view.width.div_ceil(tile_size);
    let tiles_y = view.height.div_ceil(tile_size);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (slot, g) in gaussians.iter().enumerate() {
        let tx0 = (g.min_x as u32) / tile_size;
        let tx1 = (g.max_x as u32) / tile_size;
        let ty0 = (g.min_y as u32) / tile_size;
        let ty1 = (g.max_y as u32) / tile_size;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[(ty * tiles_x + tx) as usize].push(slot as u32);
            }
        }
    }
    Prepared {
        gaussians,
        tiles,
        tiles_x,
        tile_size,
    }
}

struct TileResult {
    tile: usize,
    // Row-major within the tile: (rgb, alpha, contributors).
    pixels: Vec<([f64; 3], f64, u32)>,
}

/// Render a scene into a view by depth-sorted alpha blending.
///
/// An empty scene renders to black with zero accumulated opacity.
pub fn render(scene: &GaussianScene, view: &CameraView, options: &RenderOptions) -> RenderOutput {
    let prep = prepare(scene, view, options.tile_size);
    let width = view.width;
    let height = view.height;
    let stop = options.early_stop.unwrap_or(0.0);

    let tile_results: Vec<TileResult> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let tx = (tile as u32) % prep.tiles_x;
            let ty = (tile as u32) / prep.tiles_x;
            let x0 = tx * prep.tile_size;
            let y0 = ty * prep.tile_size;
            let x1 = (x0 + prep.tile_size).min(width);
            let y1 = (y0 + prep.tile_size).min(height);
            let list = &prep.tiles[tile];
            let mut pixels = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
            for py in y0..y1 {
                for px in x0..x1 {
                    let cx = px as f64 + 0.5;
                    let cy = py as f64 + 0.5;
                    let mut color = [0.0f64; 3];
                    let mut transmittance = 1.0f64;
                    let mut count = 0u32;
                    for &slot in list {
                        let g = &prep.gaussians[slot as usize];
                        let weight = g.weight_at(cx, cy);
                        if weight == 0.0 {
                            continue;
                        }
                        let alpha = g.opacity * weight;
                        let contribution = alpha * transmittance;
                        color[0] += contribution * g.color.x;
                        color[1] += contribution * g.color.y;
                        color[2] += contribution * g.color.z;
                        transmittance *= 1.0 - alpha;
                        count += 1;
                        if transmittance < stop {
                            break;
                        }
                    }
                    pixels.push((color, 1.0 - transmittance, count));
                }
            }
            TileResult { tile, pixels }
        })
        .collect();

    let mut color = RgbImageF::new(width, height);
    let mut alpha = vec![0.0f64; (width * height) as usize];
    let mut contributors = vec![0u32; (width * height) as usize];
    for result in tile_results {
        let tx = (result.tile as u32) % prep.tiles_x;
        let ty = (result.tile as u32) / prep.tiles_x;
        let x0 = tx * prep.tile_size;
        let y0 = ty * prep.tile_size;
        let x1 = (x0 + prep.tile_size).min(width);
        let mut it = result.pixels.into_iter();
        for py in y0..((y0 + prep.tile_size).min(height)) {
            for px in x0..x1 {
                let (rgb, a, n) = it.next().expect("tile pixel count");
                color.set(px, py, rgb);
                let idx = (py * width + px) as usize;
                alpha[idx] = a;
                contributors[idx] = n;
            }
        }
    }

    RenderOutput {
        color,
        alpha,
        contributors,
    }
}
