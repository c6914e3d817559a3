//! CLI-facing commands composing the relighting circulation: prompt
//! parsing, light-position resolution, per-view illumination maps,
//! relighting through a backend, fine-tuning with dataset updates, and the
//! epipolar overflow diagnostics.
//!
//! Every command is deterministic given the config and seed: all randomness
//! derives from `seed`, per-view work uses per-view seeds, and outputs are
//! written in sorted view order.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attention::{nearest_key_frame, select_key_frames, FeatureMap};
use crate::camera::CameraView;
use crate::config::{EncoderChoice, LightMode, PipelineConfig, RelighterConfig};
use crate::correspondence::{epipolar_correspondence, OverflowReport};
use crate::epipolar::{fundamental_matrix, normalize_fundamental, EPSILON_DEFAULT};
use crate::error::Error;
use crate::finetune::{finetune, render_all_views, FinetuneOutcome, StepLog};
use crate::illumination::{phong_diffuse, IlluminationMap, LightModel};
use crate::image_buf::RgbImageF;
use crate::latent::{encode_init_latent, save_latent, LatentBlock, LatentEncoder, ReferenceEncoder};
use crate::loss::{psnr, ssim_with_grad};
use crate::precision::PrecisionMode;
use crate::prompt::{
    apply_direction_offset, depth_at_centroid, initial_light_position, mask_centroid,
    parse_lvlm_answer, run_lvlm_adapter, run_segmenter_adapter, LightingPrior,
};
use crate::relight::{
    BuiltinBackend, CommandBackend, IdentityBackend, RelightBackend, RelightRequest,
};
use crate::scene_io::{
    load_cameras, load_depth, load_image, load_mask, load_normals, load_scene, read_pfm,
    save_gray_png, save_image, save_scene, write_pfm, PfmData,
};
use crate::splat::{GaussianScene, RenderOptions};
use crate::Result;

/// Saved output of `parse-prompt`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedPrior {
    pub prior: LightingPrior,
    /// Original edit instruction, kept for backend prompts.
    pub instruction: Option<String>,
}

/// Saved output of `light-position`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LightState {
    pub reference_view: u32,
    pub prior: LightingPrior,
    pub instruction: Option<String>,
    /// Light in reference-view camera coordinates.
    pub camera_position: [f64; 3],
    /// The same light anchored in world coordinates.
    pub world_position: [f64; 3],
    /// Object surface point (world), anchor for the directional mode.
    pub world_anchor: [f64; 3],
}

/// Deterministic per-view seed derived from the run seed (splitmix64).
pub fn view_seed(seed: u64, view_id: u32) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15_u64.wrapping_mul(view_id as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|_| {
        Error::Config(format!(
            "missing {} at {} ({hint})",
            std::any::type_name::<T>(),
            path.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn prior_path(config: &PipelineConfig) -> PathBuf {
    config.output_dir().join("prior.json")
}

pub fn light_path(config: &PipelineConfig) -> PathBuf {
    config.output_dir().join("light.json")
}

fn illum_pfm_path(config: &PipelineConfig, view_id: u32) -> PathBuf {
    config.output_dir().join("illum").join(format!("{view_id}.pfm"))
}

fn relit_path(config: &PipelineConfig, view_id: u32) -> PathBuf {
    config.output_dir().join("relit").join(format!("{view_id}.png"))
}

fn load_views(config: &PipelineConfig) -> Result<Vec<CameraView>> {
    let views = load_cameras(config.cameras_path()?)?;
    if views.is_empty() {
        return Err(Error::Validation("camera file holds no views".into()));
    }
    Ok(views)
}

fn reference_view_id(config: &PipelineConfig, views: &[CameraView]) -> Result<u32> {
    match config.reference_view {
        Some(id) => {
            if views.iter().any(|v| v.view_id == id) {
                Ok(id)
            } else {
                Err(Error::Config(format!("reference view {id} is not in the camera list")))
            }
        }
        None => Ok(views[0].view_id),
    }
}

fn view_by_id<'a>(views: &'a [CameraView], id: u32) -> Result<&'a CameraView> {
    views
        .iter()
        .find(|v| v.view_id == id)
        .ok_or_else(|| Error::Validation(format!("view {id} not found")))
}

/// Source images per view: the images directory when configured, otherwise
/// fresh renders of the scene.
fn load_or_render_sources(
    config: &PipelineConfig,
    views: &[CameraView],
    scene: Option<&GaussianScene>,
) -> Result<Vec<RgbImageF>> {
    if let Some(dir) = config.paths.images.as_deref() {
        let mut missing = Vec::new();
        for v in views {
            if !dir.join(format!("{}.png", v.view_id)).exists() {
                missing.push(v.view_id);
            }
        }
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "missing source images for views: {missing:?}"
            )));
        }
        return views
            .iter()
            .map(|v| load_image(&dir.join(format!("{}.png", v.view_id))))
            .collect();
    }
    let scene = scene.ok_or_else(|| {
        Error::Config("either paths.images or paths.scene must be provided".into())
    })?;
    Ok(render_all_views(scene, views, &RenderOptions::default()))
}

fn make_backend(config: &PipelineConfig) -> Box<dyn RelightBackend> {
    match &config.relighter {
        RelighterConfig::Builtin { ambient, diffuse } => Box::new(BuiltinBackend {
            ambient: *ambient,
            diffuse: *diffuse,
        }),
        RelighterConfig::Identity => Box::new(IdentityBackend),
        RelighterConfig::Command { command } => Box::new(CommandBackend {
            command: command.clone(),
            work_dir: config.output_dir().join("relight_work"),
        }),
    }
}

fn make_encoder(config: &PipelineConfig) -> Box<dyn LatentEncoder> {
    match config.encoder {
        EncoderChoice::Reference => Box::new(ReferenceEncoder),
    }
}

/// Parse the lighting prior from a literal answer or through the answer
/// adapter, then persist it.
pub fn cmd_parse_prompt(
    config: &PipelineConfig,
    instruction: Option<&str>,
    answer: Option<&str>,
) -> Result<SavedPrior> {
    let answer_text = match answer {
        Some(text) => text.to_string(),
        None => {
            let command = config.lvlm_command.as_ref().ok_or_else(|| {
                Error::Config(
                    "no --answer given and no lvlm_command configured".into(),
                )
            })?;
            let instruction = instruction.ok_or_else(|| {
                Error::Config("--instruction is required when querying the answer adapter".into())
            })?;
            let image = reference_image(config)?;
            run_lvlm_adapter(command, &image, instruction)?
        }
    };
    let prior = parse_lvlm_answer(&answer_text)?;
    let saved = SavedPrior {
        prior,
        instruction: instruction.map(str::to_string),
    };
    ensure_dir(config.output_dir())?;
    write_json(&saved, &prior_path(config))?;
    Ok(saved)
}

/// Path of the reference-view image, rendering it if only a scene is given.
fn reference_image(config: &PipelineConfig) -> Result<PathBuf> {
    let views = load_views(config)?;
    let ref_id = reference_view_id(config, &views)?;
    if let Some(dir) = config.paths.images.as_deref() {
        let path = dir.join(format!("{ref_id}.png"));
        if path.exists() {
            return Ok(path);
        }
    }
    let scene = load_scene(config.scene_path()?)?;
    let view = view_by_id(&views, ref_id)?;
    let rendered = crate::splat::render(&scene, view, &RenderOptions::default());
    ensure_dir(config.output_dir())?;
    let path = config.output_dir().join(format!("reference_{ref_id}.png"));
    save_image(&rendered.color, &path)?;
    Ok(path)
}

/// Resolve the 3D light position from the saved prior, the reference mask,
/// and the reference depth map.
pub fn cmd_light_position(config: &PipelineConfig) -> Result<LightState> {
    let saved: SavedPrior = read_json(&prior_path(config), "run parse-prompt first")?;
    let views = load_views(config)?;
    let ref_id = reference_view_id(config, &views)?;
    let view = view_by_id(&views, ref_id)?;

    let mask_file = config.mask_path(ref_id)?;
    let mask = if mask_file.exists() {
        load_mask(&mask_file)?
    } else if let Some(command) = config.segmenter_command.as_ref() {
        let generated = config.output_dir().join(format!("mask_{ref_id}.png"));
        ensure_dir(config.output_dir())?;
        let image = reference_image(config)?;
        run_segmenter_adapter(command, &image, &saved.prior.object_prompt, &generated)?;
        load_mask(&generated)?
    } else {
        return Err(Error::Validation(format!(
            "no mask for reference view {ref_id} at {} and no segmenter_command configured",
            mask_file.display()
        )));
    };
    if mask.width != view.width || mask.height != view.height {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match reference view {}x{}",
            mask.width, mask.height, view.width, view.height
        )));
    }

    let depth = load_depth(&config.depth_path(ref_id)?, config.depth_scale as f32)?;
    if depth.width != view.width || depth.height != view.height {
        return Err(Error::Shape(format!(
            "depth {}x{} does not match reference view {}x{}",
            depth.width, depth.height, view.width, view.height
        )));
    }

    let centroid = mask_centroid(&mask)?;
    let d_ref = depth_at_centroid(&depth, centroid)?;
    let initial = initial_light_position(centroid, &depth, view, &config.delta_init)?;
    let magnitude = config.direction_magnitude.resolve(d_ref);
    let light = apply_direction_offset(&initial, saved.prior.direction, magnitude);

    let anchor_cam = view.unproject(centroid, d_ref)?;
    let state = LightState {
        reference_view: ref_id,
        prior: saved.prior,
        instruction: saved.instruction,
        camera_position: light.position,
        world_position: view.camera_to_world(&light.vector()).into(),
        world_anchor: view.camera_to_world(&anchor_cam).into(),
    };
    ensure_dir(config.output_dir())?;
    write_json(&state, &light_path(config))?;
    Ok(state)
}

fn light_model_for_view(state: &LightState, mode: LightMode, view: &CameraView) -> LightModel {
    let world_light = Vector3::from_column_slice(&state.world_position);
    match mode {
        LightMode::Point => {
            let cam = view.world_to_camera(&world_light);
            LightModel::Point {
                position: [cam.x, cam.y, cam.z],
            }
        }
        LightMode::Directional => {
            let anchor = Vector3::from_column_slice(&state.world_anchor);
            let dir_world = anchor - world_light;
            // Directions rotate; they do not translate.
            let dir_cam = view.rotation * dir_world;
            LightModel::Directional {
                direction: [dir_cam.x, dir_cam.y, dir_cam.z],
            }
        }
    }
}

/// Compute and save the per-view illumination maps (PFM + PNG preview).
pub fn cmd_illum_maps(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let state: LightState = read_json(&light_path(config), "run light-position first")?;
    let views = load_views(config)?;

    let mut missing = Vec::new();
    for v in &views {
        if !config.depth_path(v.view_id)?.exists() {
            missing.push(format!("{} (depth)", v.view_id));
        }
        if !config.normals_path(v.view_id)?.exists() {
            missing.push(format!("{} (normals)", v.view_id));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "missing per-view geometry: {}",
            missing.join(", ")
        )));
    }

    let illum_dir = config.output_dir().join("illum");
    ensure_dir(&illum_dir)?;
    let paths: Result<Vec<PathBuf>> = views
        .par_iter()
        .map(|view| {
            let depth = load_depth(&config.depth_path(view.view_id)?, config.depth_scale as f32)?;
            let normals = load_normals(&config.normals_path(view.view_id)?)?;
            let model = light_model_for_view(&state, config.light_mode, view);
            let map = phong_diffuse(view, &depth, &normals, &model, config.gamma)?;
            let pfm_path = illum_pfm_path(config, view.view_id);
            write_pfm(
                &pfm_path,
                &PfmData {
                    width: map.width,
                    height: map.height,
                    channels: 1,
                    values: map.values.iter().map(|&v| v as f32).collect(),
                },
            )?;
            save_gray_png(
                map.width,
                map.height,
                &map.values,
                &illum_dir.join(format!("{}.png", view.view_id)),
            )?;
            Ok(pfm_path)
        })
        .collect();
    paths
}

fn load_illumination(config: &PipelineConfig, views: &[CameraView]) -> Result<Vec<IlluminationMap>> {
    let mut missing = Vec::new();
    for v in views {
        if !illum_pfm_path(config, v.view_id).exists() {
            missing.push(v.view_id);
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "missing illumination maps for views {missing:?}; run illum-maps first"
        )));
    }
    views
        .iter()
        .map(|v| {
            let pfm = read_pfm(&illum_pfm_path(config, v.view_id))?;
            if pfm.channels != 1 {
                return Err(Error::Format(format!(
                    "illumination map for view {} must be single-channel",
                    v.view_id
                )));
            }
            Ok(IlluminationMap {
                width: pfm.width,
                height: pfm.height,
                values: pfm.values.iter().map(|&v| v as f64).collect(),
                gamma: config.gamma,
            })
        })
        .collect()
}

/// Encode init latents for a batch of sources against the per-view
/// illumination maps.
fn encode_latents(
    config: &PipelineConfig,
    views: &[CameraView],
    illumination: &[IlluminationMap],
    sources: &[RgbImageF],
    encoder: &dyn LatentEncoder,
) -> Result<Vec<LatentBlock>> {
    views
        .iter()
        .zip(illumination.iter().zip(sources.iter()))
        .map(|(view, (illum, source))| {
            let mut block = encode_init_latent(
                illum,
                source,
                encoder,
                config.noise_level,
                view_seed(config.seed, view.view_id),
            )?;
            block.source_view = view.view_id;
            Ok(block)
        })
        .collect()
}

fn relight_batch(
    config: &PipelineConfig,
    views: &[CameraView],
    illumination: &[IlluminationMap],
    sources: &[RgbImageF],
    saved: &SavedPrior,
    encoder: &dyn LatentEncoder,
    backend: &dyn RelightBackend,
) -> Result<Vec<RgbImageF>> {
    let latents = encode_latents(config, views, illumination, sources, encoder)?;
    let prompt = crate::relight::batch_prompt(&saved.prior, saved.instruction.as_deref());
    let requests: Vec<RelightRequest> = views
        .iter()
        .zip(sources.iter().zip(latents.iter()))
        .map(|(view, (image, latent))| RelightRequest {
            view_id: view.view_id,
            image: image.clone(),
            latent: latent.clone(),
            prompt: prompt.clone(),
        })
        .collect();
    let outputs = backend.relight(&requests)?;
    if outputs.len() != requests.len() {
        return Err(Error::Contract(format!(
            "backend returned {} outputs for {} requests",
            outputs.len(),
            requests.len()
        )));
    }
    for (out, req) in outputs.iter().zip(requests.iter()) {
        if !out.same_dims(&req.image) {
            return Err(Error::Contract(format!(
                "view {}: relit output {}x{} drifted from input {}x{}",
                req.view_id, out.width, out.height, req.image.width, req.image.height
            )));
        }
    }
    Ok(outputs)
}

/// Encode latents, invoke the relighting backend, and save relit views.
pub fn cmd_relight(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let saved: SavedPrior = read_json(&prior_path(config), "run parse-prompt first")?;
    let views = load_views(config)?;
    let scene = match config.paths.scene.as_deref() {
        Some(path) => Some(load_scene(path)?),
        None => None,
    };
    let sources = load_or_render_sources(config, &views, scene.as_ref())?;
    let illumination = load_illumination(config, &views)?;
    for (illum, source) in illumination.iter().zip(sources.iter()) {
        if illum.width != source.width || illum.height != source.height {
            return Err(Error::Shape(format!(
                "illumination {}x{} does not match source {}x{}",
                illum.width, illum.height, source.width, source.height
            )));
        }
    }

    let encoder = make_encoder(config);
    let backend = make_backend(config);
    let latents = encode_latents(config, &views, &illumination, &sources, encoder.as_ref())?;
    let latent_dir = config.output_dir().join("latents");
    ensure_dir(&latent_dir)?;
    for latent in &latents {
        save_latent(latent, &latent_dir.join(format!("{}.gsll", latent.source_view)))?;
    }

    let relit = relight_batch(
        config,
        &views,
        &illumination,
        &sources,
        &saved,
        encoder.as_ref(),
        backend.as_ref(),
    )?;
    let relit_dir = config.output_dir().join("relit");
    ensure_dir(&relit_dir)?;
    let mut paths = Vec::with_capacity(views.len());
    for (view, image) in views.iter().zip(relit.iter()) {
        let path = relit_path(config, view.view_id);
        save_image(image, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Render all views and save them as PNGs.
pub fn cmd_render(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let views = load_views(config)?;
    let scene = load_scene(config.scene_path()?)?;
    let renders = render_all_views(&scene, &views, &RenderOptions::default());
    let dir = config.output_dir().join("renders");
    ensure_dir(&dir)?;
    let mut paths = Vec::with_capacity(views.len());
    for (view, image) in views.iter().zip(renders.iter()) {
        let path = dir.join(format!("{}.png", view.view_id));
        save_image(image, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

fn write_loss_csv(log: &[StepLog], path: &Path) -> Result<()> {
    let mut text = String::from("step,view_id,l1,ssim,total\n");
    for e in log {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            e.step, e.view_id, e.l1, e.ssim, e.total
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn metrics_json(
    views: &[CameraView],
    renders: &[RgbImageF],
    targets: &[RgbImageF],
    dataset_updates: &[usize],
    overflow: Option<&OverflowReport>,
) -> Result<serde_json::Value> {
    let mut per_view = Vec::with_capacity(views.len());
    let mut psnr_sum = 0.0f64;
    let mut ssim_sum = 0.0f64;
    for ((view, render), target) in views.iter().zip(renders.iter()).zip(targets.iter()) {
        let p = psnr(render, target)?;
        let (s, _) = ssim_with_grad(render, target)?;
        psnr_sum += p;
        ssim_sum += s;
        per_view.push(json!({
            "view_id": view.view_id,
            "psnr": if p.is_finite() { json!(p) } else { json!("inf") },
            "ssim": s,
        }));
    }
    let n = views.len().max(1) as f64;
    let mean_psnr = psnr_sum / n;
    Ok(json!({
        "per_view": per_view,
        "mean_psnr": if mean_psnr.is_finite() { json!(mean_psnr) } else { json!("inf") },
        "mean_ssim": ssim_sum / n,
        "dataset_updates": dataset_updates,
        "overflow": overflow,
    }))
}

/// Fine-tune the scene against backend-relit renders (iterative dataset
/// update), then save the tuned scene, the loss log, and metrics.
pub fn cmd_finetune(config: &PipelineConfig) -> Result<FinetuneOutcome> {
    let saved: SavedPrior = read_json(&prior_path(config), "run parse-prompt first")?;
    let views = load_views(config)?;
    let scene = load_scene(config.scene_path()?)?;
    let illumination = load_illumination(config, &views)?;
    let encoder = make_encoder(config);
    let backend = make_backend(config);

    let options = RenderOptions::default();
    let initial_renders = render_all_views(&scene, &views, &options);
    let schedule = config.tune.into();
    let outcome = finetune(&scene, &views, &initial_renders, &schedule, |renders| {
        relight_batch(
            config,
            &views,
            &illumination,
            renders,
            &saved,
            encoder.as_ref(),
            backend.as_ref(),
        )
    })?;

    ensure_dir(config.output_dir())?;
    save_scene(&outcome.scene, &config.output_dir().join("tuned.ply"))?;
    write_loss_csv(&outcome.log, &config.output_dir().join("loss_log.csv"))?;
    let final_renders = render_all_views(&outcome.scene, &views, &options);
    let metrics = metrics_json(
        &views,
        &final_renders,
        &outcome.final_targets,
        &outcome.dataset_updates,
        None,
    )?;
    std::fs::write(
        config.output_dir().join("metrics.json"),
        serde_json::to_string_pretty(&metrics)
            .map_err(|e| Error::Format(format!("metrics: {e}")))?,
    )?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseCase {
    pub precision: PrecisionMode,
    pub normalized: bool,
    pub report: OverflowReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseOutput {
    /// Frobenius norm the unnormalized arm is rescaled to.
    pub unnormalized_norm: f64,
    pub cases: Vec<DiagnoseCase>,
}

/// Feature resolutions the diagnostics sweep, mirroring denoiser-style
/// pyramid levels.
pub const DIAGNOSE_RESOLUTIONS: [u32; 4] = [64, 32, 16, 8];

const FEATURE_DIM: usize = 6;

/// Synthesize a feature map for a view: box-downsampled source color plus
/// seeded noise channels. Realistic coordinate magnitudes are what matter
/// here, not semantics.
fn synthesize_features(image: &RgbImageF, view_id: u32, grid: u32, seed: u64) -> FeatureMap {
    use rand::Rng;
    use rand::SeedableRng;
    let mut map = FeatureMap::new(view_id, grid, grid, FEATURE_DIM);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        view_seed(seed, view_id) ^ (grid as u64) << 32,
    );
    for gy in 0..grid {
        for gx in 0..grid {
            let x0 = (gx as usize * image.width as usize) / grid as usize;
            let x1 = (((gx + 1) as usize * image.width as usize) / grid as usize)
                .max(x0 + 1)
                .min(image.width as usize);
            let y0 = (gy as usize * image.height as usize) / grid as usize;
            let y1 = (((gy + 1) as usize * image.height as usize) / grid as usize)
                .max(y0 + 1)
                .min(image.height as usize);
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = image.get(x as u32, y as u32);
                    acc[0] += p[0];
                    acc[1] += p[1];
                    acc[2] += p[2];
                    n += 1.0;
                }
            }
            let mut feature = [0.0f64; FEATURE_DIM];
            feature[0] = acc[0] / n;
            feature[1] = acc[1] / n;
            feature[2] = acc[2] / n;
            for f in feature.iter_mut().skip(3) {
                *f = rng.random_range(-0.25..0.25);
            }
            map.set(gx, gy, &feature);
        }
    }
    map
}

/// Sweep the epipolar correspondence over resolutions, precision modes, and
/// normalization, reporting overflow rates (four aggregated cases).
pub fn cmd_diagnose_epipolar(config: &PipelineConfig) -> Result<DiagnoseOutput> {
    const UNNORMALIZED_NORM: f64 = 1e6;
    let views = load_views(config)?;
    if views.len() < 2 {
        return Err(Error::Validation(
            "diagnose-epipolar needs at least two views".into(),
        ));
    }
    let scene = match config.paths.scene.as_deref() {
        Some(path) => Some(load_scene(path)?),
        None => None,
    };
    let sources = load_or_render_sources(config, &views, scene.as_ref())?;

    let key_ids = select_key_frames(&views, config.key_stride)?;
    let keys: Vec<CameraView> = views
        .iter()
        .filter(|v| key_ids.contains(&v.view_id))
        .cloned()
        .collect();
    // Pair every non-key view with its nearest key; when the stride makes
    // every view a key, fall back to consecutive pairs so there is always
    // something to measure.
    let pairs: Vec<(usize, usize)> = {
        let index_of = |id: u32| views.iter().position(|v| v.view_id == id).unwrap();
        let nonkeys: Vec<usize> = views
            .iter()
            .enumerate()
            .filter(|(_, v)| !key_ids.contains(&v.view_id))
            .map(|(i, _)| i)
            .collect();
        if nonkeys.is_empty() {
            (1..views.len()).map(|i| (i, i - 1)).collect()
        } else {
            nonkeys
                .into_iter()
                .map(|i| {
                    let key_id = nearest_key_frame(&views[i], &keys)?;
                    Ok((i, index_of(key_id)))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    let mut case_reports: Vec<(PrecisionMode, bool, Vec<OverflowReport>)> = vec![
        (PrecisionMode::Full, false, Vec::new()),
        (PrecisionMode::Full, true, Vec::new()),
        (PrecisionMode::Reduced, false, Vec::new()),
        (PrecisionMode::Reduced, true, Vec::new()),
    ];

    for &(nonkey_idx, key_idx) in &pairs {
        let nonkey_view = &views[nonkey_idx];
        let key_view = &views[key_idx];
        let f_image = fundamental_matrix(nonkey_view, key_view)?;
        for &grid in &DIAGNOSE_RESOLUTIONS {
            let nonkey_feat =
                synthesize_features(&sources[nonkey_idx], nonkey_view.view_id, grid, config.seed);
            let key_feat =
                synthesize_features(&sources[key_idx], key_view.view_id, grid, config.seed);
            let f_grid = f_image.for_feature_grid(
                (nonkey_view.width, nonkey_view.height),
                (key_view.width, key_view.height),
                (grid, grid),
            );
            let unnormalized = f_grid.with_norm(UNNORMALIZED_NORM);
            let normalized = normalize_fundamental(&f_grid, EPSILON_DEFAULT);
            for (mode, use_normalized, reports) in case_reports.iter_mut() {
                let f = if *use_normalized { &normalized } else { &unnormalized };
                let (_, report) = epipolar_correspondence(
                    &nonkey_feat,
                    &key_feat,
                    f,
                    config.epipolar_band,
                    *mode,
                )?;
                reports.push(report);
            }
        }
    }

    let cases: Vec<DiagnoseCase> = case_reports
        .into_iter()
        .map(|(precision, normalized, reports)| DiagnoseCase {
            precision,
            normalized,
            report: OverflowReport::merge(reports),
        })
        .collect();
    let output = DiagnoseOutput {
        unnormalized_norm: UNNORMALIZED_NORM,
        cases,
    };
    ensure_dir(config.output_dir())?;
    write_json(&output, &config.output_dir().join("overflow.json"))?;
    Ok(output)
}

/// Render the diagnostics as a fixed-width text table.
pub fn diagnose_table(output: &DiagnoseOutput) -> String {
    let mut text = String::from("precision  normalized  size   total  overflowed  rate\n");
    for case in &output.cases {
        for r in &case.report.resolutions {
            text.push_str(&format!(
                "{:<9}  {:<10}  {:>4}  {:>6}  {:>10}  {:.4}\n",
                match case.precision {
                    PrecisionMode::Full => "full",
                    PrecisionMode::Reduced => "reduced",
                },
                case.normalized,
                r.size,
                r.total,
                r.overflowed,
                r.rate
            ));
        }
        text.push_str(&format!(
            "{:<9}  {:<10}  avg rate {:.4}\n",
            match case.precision {
                PrecisionMode::Full => "full",
                PrecisionMode::Reduced => "reduced",
            },
            case.normalized,
            case.report.avg_rate
        ));
    }
    text
}

/// The full circulation: parse-prompt, light-position, illum-maps, relight,
/// finetune. Identical to running the subcommands in sequence.
pub fn cmd_pipeline(
    config: &PipelineConfig,
    instruction: Option<&str>,
    answer: Option<&str>,
) -> Result<FinetuneOutcome> {
    cmd_parse_prompt(config, instruction, answer)?;
    cmd_light_position(config)?;
    cmd_illum_maps(config)?;
    cmd_relight(config)?;
    cmd_finetune(config)
}

