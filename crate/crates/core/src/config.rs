//! Run configuration: one JSON file drives every subcommand.
//!
//! Unknown keys are rejected so typos fail loudly. Anything not given falls
//! back to the documented defaults; targeted CLI overrides (`--gamma`,
//! `--stride`, ...) are applied after loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::precision::PrecisionMode;
use crate::prompt::DeltaInit;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelinePaths {
    /// Pretrained Gaussian scene (binary PLY).
    pub scene: Option<PathBuf>,
    /// Camera list (JSON).
    pub cameras: Option<PathBuf>,
    /// Per-view source images (`<view_id>.png`); rendered from the scene
    /// when absent.
    pub images: Option<PathBuf>,
    /// Per-view depth maps (`<view_id>.pfm`).
    pub depths: Option<PathBuf>,
    /// Per-view normal maps (`<view_id>.pfm`).
    pub normals: Option<PathBuf>,
    /// Object masks (`<view_id>.png`), at least for the reference view.
    pub masks: Option<PathBuf>,
    /// Output directory; created if missing.
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum Magnitude {
    /// Scene units.
    Absolute(f64),
    /// Multiples of the reference object's depth.
    Relative(f64),
}

impl Magnitude {
    pub fn resolve(&self, d_ref: f64) -> f64 {
        match self {
            Magnitude::Absolute(v) => *v,
            Magnitude::Relative(v) => v * d_ref,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderChoice {
    /// Built-in 8x8 area-average encoder (4 channels).
    Reference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum RelighterConfig {
    Builtin {
        #[serde(default = "default_ambient")]
        ambient: f64,
        #[serde(default = "default_diffuse")]
        diffuse: f64,
    },
    Identity,
    Command {
        command: Vec<String>,
    },
}

fn default_ambient() -> f64 {
    0.3
}
fn default_diffuse() -> f64 {
    0.7
}

impl Default for RelighterConfig {
    fn default() -> Self {
        RelighterConfig::Builtin {
            ambient: default_ambient(),
            diffuse: default_diffuse(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightMode {
    /// Point light at the resolved position.
    Point,
    /// Directional light along (object anchor - light position).
    Directional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub k_int: usize,
    pub k_reap: usize,
    pub lambda: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            k_int: 500,
            k_reap: 2,
            lambda: 0.2,
            lr_color: 0.0025,
            lr_opacity: 0.05,
        }
    }
}

impl From<TuneConfig> for crate::finetune::TuneSchedule {
    fn from(c: TuneConfig) -> Self {
        crate::finetune::TuneSchedule {
            k_int: c.k_int,
            k_reap: c.k_reap,
            lambda: c.lambda,
            lr_color: c.lr_color,
            lr_opacity: c.lr_opacity,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PipelinePaths,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub delta_init: DeltaInit,
    #[serde(default = "default_direction_magnitude")]
    pub direction_magnitude: Magnitude,
    #[serde(default = "default_key_stride")]
    pub key_stride: usize,
    #[serde(default = "default_band")]
    pub epipolar_band: f64,
    #[serde(default = "default_precision")]
    pub precision: PrecisionMode,
    #[serde(default = "default_noise_level")]
    pub noise_level: f64,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderChoice,
    #[serde(default)]
    pub relighter: RelighterConfig,
    #[serde(default)]
    pub lvlm_command: Option<Vec<String>>,
    #[serde(default)]
    pub segmenter_command: Option<Vec<String>>,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub seed: u64,
    /// Reference view for the lighting prior; defaults to the first view.
    #[serde(default)]
    pub reference_view: Option<u32>,
    /// Rescales loaded depths into scene units.
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    #[serde(default = "default_light_mode")]
    pub light_mode: LightMode,
    /// Worker threads for per-view parallel stages (0 = library default).
    #[serde(default)]
    pub threads: usize,
}

fn default_gamma() -> f64 {
    2.0
}
fn default_direction_magnitude() -> Magnitude {
    Magnitude::Relative(1.0)
}
fn default_key_stride() -> usize {
    4
}
fn default_band() -> f64 {
    2.0
}
fn default_precision() -> PrecisionMode {
    PrecisionMode::Full
}
fn default_noise_level() -> f64 {
    0.6
}
fn default_encoder() -> EncoderChoice {
    EncoderChoice::Reference
}
fn default_depth_scale() -> f64 {
    1.0
}
fn default_light_mode() -> LightMode {
    LightMode::Point
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!(
                "noise_level must lie in [0,1], got {}",
                self.noise_level
            )));
        }
        if self.key_stride == 0 {
            return Err(Error::Config("key_stride must be >= 1".into()));
        }
        if self.epipolar_band < 0.0 {
            return Err(Error::Config("epipolar_band must be >= 0".into()));
        }
        if self.tune.k_int == 0 || self.tune.k_reap == 0 {
            return Err(Error::Config("tune.k_int and tune.k_reap must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tune.lambda) {
            return Err(Error::Config(format!(
                "tune.lambda must lie in [0,1], got {}",
                self.tune.lambda
            )));
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::Config("depth_scale must be positive".into()));
        }
        for (name, path) in [
            ("scene", &self.paths.scene),
            ("cameras", &self.paths.cameras),
            ("images", &self.paths.images),
            ("depths", &self.paths.depths),
            ("normals", &self.paths.normals),
            ("masks", &self.paths.masks),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "paths.{name} does not exist: {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn scene_path(&self) -> Result<&Path> {
        self.paths
            .scene
            .as_deref()
            .ok_or_else(|| Error::Config("paths.scene is required for this command".into()))
    }

    pub fn cameras_path(&self) -> Result<&Path> {
        self.paths
            .cameras
            .as_deref()
            .ok_or_else(|| Error::Config("paths.cameras is required for this command".into()))
    }

    pub fn depth_path(&self, view_id: u32) -> Result<PathBuf> {
        Ok(self
            .paths
            .depths
            .as_deref()
            .ok_or_else(|| Error::Config("paths.depths is required for this command".into()))?
            .join(format!("{view_id}.pfm")))
    }

    pub fn normals_path(&self, view_id: u32) -> Result<PathBuf> {
        Ok(self
            .paths
            .normals
            .as_deref()
            .ok_or_else(|| Error::Config("paths.normals is required for this command".into()))?
            .join(format!("{view_id}.pfm")))
    }

    pub fn mask_path(&self, view_id: u32) -> Result<PathBuf> {
        Ok(self
            .paths
            .masks
            .as_deref()
            .ok_or_else(|| Error::Config("paths.masks is required for this command".into()))?
            .join(format!("{view_id}.png")))
    }

    pub fn output_dir(&self) -> &Path {
        &self.paths.output
    }
}
