//! Relighting backend boundary.
//!
//! The heavy relighting model runs behind [`RelightBackend`]. Two built-in
//! backends keep the pipeline runnable without external weights: an
//! identity echo and a deterministic analytic relighter that modulates the
//! source image by the decoded illumination latent and a prompt-keyed tint.
//! External models attach through [`CommandBackend`], a subprocess contract
//! exchanging a JSON manifest and per-view PNGs.

use std::path::PathBuf;
use std::process::Command;

use serde::Serialize;

use crate::error::Error;
use crate::image_buf::RgbImageF;
use crate::latent::{save_latent, LatentBlock};
use crate::prompt::LightingPrior;
use crate::scene_io::{load_image, save_image};
use crate::Result;

#[derive(Debug, Clone)]
pub struct RelightRequest {
    pub view_id: u32,
    pub image: RgbImageF,
    pub latent: LatentBlock,
    pub prompt: String,
}

pub trait RelightBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn relight(&self, requests: &[RelightRequest]) -> Result<Vec<RgbImageF>>;
}

/// Echoes the input images; the no-edit fixed point.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityBackend;

impl RelightBackend for IdentityBackend {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn relight(&self, requests: &[RelightRequest]) -> Result<Vec<RgbImageF>> {
        Ok(requests.iter().map(|r| r.image.clone()).collect())
    }
}

/// Prompt-word tint table; the first listed word found in the prompt wins.
const TINTS: [(&str, [f64; 3]); 10] = [
    ("white", [1.0, 1.0, 1.0]),
    ("golden", [1.0, 0.84, 0.45]),
    ("sunset", [1.0, 0.72, 0.45]),
    ("warm", [1.0, 0.85, 0.65]),
    ("orange", [1.0, 0.65, 0.35]),
    ("red", [1.0, 0.45, 0.4]),
    ("green", [0.55, 1.0, 0.55]),
    ("moonlight", [0.75, 0.8, 1.0]),
    ("cool", [0.75, 0.85, 1.0]),
    ("blue", [0.5, 0.65, 1.0]),
];

fn tint_for_prompt(prompt: &str) -> [f64; 3] {
    let lower = prompt.to_ascii_lowercase();
    for (word, tint) in TINTS {
        if lower.split(|c: char| !c.is_ascii_alphanumeric()).any(|w| w == word) {
            return tint;
        }
    }
    [1.0, 1.0, 1.0]
}

/// Deterministic analytic relighter:
/// `out = clamp(src * tint * (a + b * I_d))`, with the illumination
/// intensity decoded from the init latent (mean of the first three
/// illumination channels, nearest-upsampled back to image resolution).
#[derive(Debug, Clone, Copy)]
pub struct BuiltinBackend {
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for BuiltinBackend {
    fn default() -> Self {
        BuiltinBackend {
            ambient: 0.3,
            diffuse: 0.7,
        }
    }
}

impl BuiltinBackend {
    fn intensity_from_latent(latent: &LatentBlock, x: u32, y: u32) -> f64 {
        let c = latent.channels / 2;
        let used = c.min(3).max(1);
        let mut sum = 0.0;
        for ch in 0..used {
            sum += latent.get(x, y, ch) as f64;
        }
        sum / used as f64
    }
}

impl RelightBackend for BuiltinBackend {
    fn name(&self) -> &'static str {
        "builtin"
    }

    fn relight(&self, requests: &[RelightRequest]) -> Result<Vec<RgbImageF>> {
        let mut outputs = Vec::with_capacity(requests.len());
        for req in requests {
            let latent = &req.latent;
            if latent.channels < 2 {
                return Err(Error::Contract(format!(
                    "view {}: init latent must hold illumination and image halves, got {} channels",
                    req.view_id, latent.channels
                )));
            }
            if latent.width * 8 != req.image.width || latent.height * 8 != req.image.height {
                return Err(Error::Contract(format!(
                    "view {}: latent {}x{} does not correspond to image {}x{}",
                    req.view_id, latent.width, latent.height, req.image.width, req.image.height
                )));
            }
            let tint = tint_for_prompt(&req.prompt);
            let mut out = RgbImageF::new(req.image.width, req.image.height);
            for y in 0..req.image.height {
                for x in 0..req.image.width {
                    let intensity = Self::intensity_from_latent(latent, x / 8, y / 8);
                    let gain = self.ambient + self.diffuse * intensity;
                    let src = req.image.get(x, y);
                    out.set(
                        x,
                        y,
                        [
                            (src[0] * tint[0] * gain).clamp(0.0, 1.0),
                            (src[1] * tint[1] * gain).clamp(0.0, 1.0),
                            (src[2] * tint[2] * gain).clamp(0.0, 1.0),
                        ],
                    );
                }
            }
            outputs.push(out);
        }
        Ok(outputs)
    }
}

#[derive(Serialize)]
struct ManifestEntry {
    view_id: u32,
    image_path: String,
    latent_path: String,
    prompt: String,
}

/// External relighter: the command is invoked once per batch with the
/// manifest path and an output directory, and must write `<view_id>.png`
/// for every manifest entry, exiting zero on success.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    pub command: Vec<String>,
    /// Scratch directory for manifest, inputs, and outputs.
    pub work_dir: PathBuf,
}

impl RelightBackend for CommandBackend {
    fn name(&self) -> &'static str {
        "command"
    }

    fn relight(&self, requests: &[RelightRequest]) -> Result<Vec<RgbImageF>> {
        let (program, leading) = self
            .command
            .split_first()
            .ok_or_else(|| Error::Config("empty relighter command".into()))?;
        let input_dir = self.work_dir.join("inputs");
        let output_dir = self.work_dir.join("outputs");
        std::fs::create_dir_all(&input_dir)?;
        std::fs::create_dir_all(&output_dir)?;

        let mut manifest = Vec::with_capacity(requests.len());
        for req in requests {
            let image_path = input_dir.join(format!("{}.png", req.view_id));
            let latent_path = input_dir.join(format!("{}.gsll", req.view_id));
            save_image(&req.image, &image_path)?;
            save_latent(&req.latent, &latent_path)?;
            manifest.push(ManifestEntry {
                view_id: req.view_id,
                image_path: image_path.to_string_lossy().into_owned(),
                latent_path: latent_path.to_string_lossy().into_owned(),
                prompt: req.prompt.clone(),
            });
        }
        let manifest_path = self.work_dir.join("manifest.json");
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest)
                .map_err(|e| Error::Format(format!("manifest: {e}")))?,
        )?;

        let output = Command::new(program)
            .args(leading)
            .arg(&manifest_path)
            .arg(&output_dir)
            .output()
            .map_err(|e| Error::Adapter(format!("failed to launch '{program}': {e}")))?;
        if !output.status.success() {
            return Err(Error::Adapter(format!(
                "relighter exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }

        let mut results = Vec::with_capacity(requests.len());
        for req in requests {
            let path = output_dir.join(format!("{}.png", req.view_id));
            if !path.exists() {
                return Err(Error::Adapter(format!(
                    "relighter wrote no output for view {}",
                    req.view_id
                )));
            }
            let img = load_image(&path)?;
            if !img.same_dims(&req.image) {
                return Err(Error::Contract(format!(
                    "view {}: relighter output is {}x{}, input was {}x{}",
                    req.view_id, img.width, img.height, req.image.width, req.image.height
                )));
            }
            results.push(img);
        }
        Ok(results)
    }
}

/// Run a batch through a backend and validate the output contract.
pub fn relight_views(
    images: &[RgbImageF],
    init_latents: &[LatentBlock],
    prior: &LightingPrior,
    instruction: Option<&str>,
    backend: &dyn RelightBackend,
) -> Result<Vec<RgbImageF>> {
    if images.len() != init_latents.len() {
        return Err(Error::Shape(format!(
            "{} images but {} latents",
            images.len(),
            init_latents.len()
        )));
    }
    let prompt = instruction
        .map(str::to_string)
        .unwrap_or_else(|| crate::prompt::render_template(prior));
    let requests: Vec<RelightRequest> = images
        .iter()
        .zip(init_latents.iter())
        .map(|(image, latent)| RelightRequest {
            view_id: latent.source_view,
            image: image.clone(),
            latent: latent.clone(),
            prompt: prompt.clone(),
        })
        .collect();
    let outputs = backend.relight(&requests)?;
    if outputs.len() != requests.len() {
        return Err(Error::Contract(format!(
            "backend '{}' returned {} outputs for {} inputs",
            backend.name(),
            outputs.len(),
            requests.len()
        )));
    }
    for (out, req) in outputs.iter().zip(requests.iter()) {
        if !out.same_dims(&req.image) {
            return Err(Error::Contract(format!(
                "view {}: output dims {}x{} drifted from input {}x{}",
                req.view_id, out.width, out.height, req.image.width, req.image.height
            )));
        }
        if !out.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Contract(format!(
                "view {}: output pixels outside [0,1]",
                req.view_id
            )));
        }
    }
    Ok(outputs)
}

/// Resolve the per-view prompt for manifest construction (exposed for the
/// pipeline's dataset-update loop).
pub fn batch_prompt(prior: &LightingPrior, instruction: Option<&str>) -> String {
    instruction
        .map(str::to_string)
        .unwrap_or_else(|| crate::prompt::render_template(prior))
}
