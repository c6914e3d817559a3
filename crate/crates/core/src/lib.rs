//! Library core for relighting pretrained Gaussian-splat scenes from textual
//! lighting instructions.
//!
//! The crate is organized around the stages of the relighting circulation:
//!
//! - [`scene_io`] — on-disk formats (Gaussian PLY, camera JSON, PFM rasters, PNG).
//! - [`camera`] / [`epipolar`] — pinhole projection and two-view epipolar algebra.
//! - [`prompt`] — parsing the constrained lighting-answer template and resolving
//!   a 3D light position from a mask and depth.
//! - [`illumination`] / [`latent`] — Phong-style diffuse intensity maps and their
//!   latent-space encoding for relighting backends.
//! - [`attention`] / [`correspondence`] — cross-view attention over key frames and
//!   epipolar-constrained feature propagation, with reduced-precision overflow
//!   diagnostics.
//! - [`relight`] — the relighting backend boundary (built-in analytic backend or
//!   an external command).
//! - [`splat`] / [`loss`] / [`optim`] / [`finetune`] — the differentiable tile
//!   rasterizer and the color/opacity fine-tuning loop with iterative dataset
//!   updates.
//! - [`config`] / [`pipeline`] — run configuration and the CLI-facing commands.

pub mod attention;
pub mod camera;
pub mod config;
pub mod correspondence;
pub mod epipolar;
pub mod error;
pub mod finetune;
pub mod illumination;
pub mod image_buf;
pub mod latent;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod precision;
pub mod prompt;
pub mod relight;
pub mod scene_io;
pub mod splat;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
