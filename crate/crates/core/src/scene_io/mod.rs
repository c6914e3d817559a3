//! On-disk formats: Gaussian scenes (binary PLY), cameras (JSON), depth and
//! normal rasters (PFM), images and masks (PNG).
//!
//! Every loader either returns a value satisfying its type's invariants or
//! errors; every loader/saver pair round-trips in-range data losslessly.

mod cameras;
mod pfm;
mod ply;
mod png_io;

pub use cameras::{load_cameras, load_cameras_from_str, save_cameras};
pub use pfm::{
    load_depth, load_normals, read_pfm, save_depth, save_normals, write_pfm, PfmData,
};
pub use ply::{load_scene, save_scene};
pub use png_io::{load_image, load_mask, save_gray_png, save_image, save_mask};

/// Per-pixel metric depth (camera z). `0.0` marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    /// Row-major, top-down.
    pub values: Vec<f32>,
}

/// Depth value marking an invalid pixel.
pub const INVALID_DEPTH: f32 = 0.0;

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), (width as usize) * (height as usize));
        DepthMap {
            width,
            height,
            values,
        }
    }

    pub fn constant(width: u32, height: u32, value: f32) -> Self {
        DepthMap::new(width, height, vec![value; (width as usize) * (height as usize)])
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y as usize) * (self.width as usize) + (x as usize)]
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        let v = self.get(x, y);
        v > 0.0 && v.is_finite()
    }
}

/// Per-pixel unit surface normals in camera coordinates. The zero vector
/// marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: u32,
    pub height: u32,
    /// Row-major, top-down, three components per pixel.
    pub values: Vec<f32>,
}

impl NormalMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), (width as usize) * (height as usize) * 3);
        NormalMap {
            width,
            height,
            values,
        }
    }

    pub fn constant(width: u32, height: u32, n: [f32; 3]) -> Self {
        let mut values = Vec::with_capacity((width as usize) * (height as usize) * 3);
        for _ in 0..(width as usize) * (height as usize) {
            values.extend_from_slice(&n);
        }
        NormalMap::new(width, height, values)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let i = 3 * ((y as usize) * (self.width as usize) + (x as usize));
        [self.values[i], self.values[i + 1], self.values[i + 2]]
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        let [a, b, c] = self.get(x, y);
        let norm2 = a * a + b * b + c * c;
        norm2.is_finite() && norm2 > 1e-12
    }
}

/// Binary object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub width: u32,
    pub height: u32,
    /// Row-major, top-down.
    pub values: Vec<bool>,
}

impl ObjectMask {
    pub fn new(width: u32, height: u32, values: Vec<bool>) -> Self {
        assert_eq!(values.len(), (width as usize) * (height as usize));
        ObjectMask {
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.values[(y as usize) * (self.width as usize) + (x as usize)]
    }

    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}
