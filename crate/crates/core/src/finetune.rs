//! Color/opacity fine-tuning with iterative dataset updates.
//!
//! Each of the `k_reap` outer epochs re-renders every view, hands the
//! renders to `relight_fn` to regenerate the training targets, then runs
//! `k_int` gradient steps cycling the views round-robin. Geometry stays
//! bit-identical; only the color and opacity logits move.

use rayon::prelude::*;

use crate::camera::CameraView;
use crate::error::Error;
use crate::image_buf::RgbImageF;
use crate::loss::compute_loss;
use crate::optim::Adam;
use crate::splat::{render, render_backward, GaussianScene, RenderOptions};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneSchedule {
    /// Gradient steps per dataset epoch.
    pub k_int: usize,
    /// Number of dataset updates (outer epochs).
    pub k_reap: usize,
    /// SSIM weight in the combined loss.
    pub lambda: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
}

impl Default for TuneSchedule {
    fn default() -> Self {
        TuneSchedule {
            k_int: 500,
            k_reap: 2,
            lambda: 0.2,
            lr_color: 0.0025,
            lr_opacity: 0.05,
        }
    }
}

impl TuneSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.k_int < 1 || self.k_reap < 1 {
            return Err(Error::Domain(format!(
                "k_int and k_reap must be >= 1, got {} and {}",
                self.k_int, self.k_reap
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!(
                "lambda must lie in [0,1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub view_id: u32,
    pub l1: f64,
    pub ssim: f64,
    pub total: f64,
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub scene: GaussianScene,
    pub log: Vec<StepLog>,
    /// Global step index at which each dataset update happened.
    pub dataset_updates: Vec<usize>,
    /// Training targets in effect when tuning finished.
    pub final_targets: Vec<RgbImageF>,
    /// Set when a dataset update failed; the scene and log hold the
    /// progress made up to that point.
    pub aborted: Option<Box<Error>>,
}

/// Render every view of the scene (parallel over views, deterministic).
pub fn render_all_views(
    scene: &GaussianScene,
    views: &[CameraView],
    options: &RenderOptions,
) -> Vec<RgbImageF> {
    views
        .par_iter()
        .map(|view| render(scene, view, options).color)
        .collect()
}

/// Fine-tune color and opacity against relit targets.
///
/// `relight_fn` receives the fresh renders of all views at the start of
/// each epoch and returns the new targets for them (the dataset update).
pub fn finetune(
    scene: &GaussianScene,
    views: &[CameraView],
    initial_targets: &[RgbImageF],
    schedule: &TuneSchedule,
    mut relight_fn: impl FnMut(&[RgbImageF]) -> Result<Vec<RgbImageF>>,
) -> Result<FinetuneOutcome> {
    schedule.validate()?;
    if views.is_empty() {
        return Err(Error::Domain("finetune needs at least one view".into()));
    }
    if initial_targets.len() != views.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} views",
            initial_targets.len(),
            views.len()
        )));
    }
    for (t, v) in initial_targets.iter().zip(views.iter()) {
        if t.width != v.width || t.height != v.height {
            return Err(Error::Shape(format!(
                "target {}x{} does not match view {} ({}x{})",
                t.width, t.height, v.view_id, v.width, v.height
            )));
        }
    }

    let options = RenderOptions::default();
    let mut scene = scene.clone();
    let n = scene.len();

    let mut color_params: Vec<f64> = Vec::with_capacity(3 * n);
    let mut opacity_params: Vec<f64> = Vec::with_capacity(n);
    for r in &scene.records {
        color_params.extend_from_slice(&[r.color_logit.x, r.color_logit.y, r.color_logit.z]);
        opacity_params.push(r.opacity_logit);
    }
    let mut adam_color = Adam::new(schedule.lr_color, 3 * n);
    let mut adam_opacity = Adam::new(schedule.lr_opacity, n);

    let mut targets: Vec<RgbImageF> = initial_targets.to_vec();
    let mut log = Vec::with_capacity(schedule.k_int * schedule.k_reap);
    let mut dataset_updates = Vec::with_capacity(schedule.k_reap);
    let mut step = 0usize;

    for _epoch in 0..schedule.k_reap {
        let renders = render_all_views(&scene, views, &options);
        match relight_fn(&renders) {
            Ok(new_targets) => {
                if new_targets.len() != views.len() {
                    return Ok(FinetuneOutcome {
                        scene,
                        log,
                        dataset_updates,
                        final_targets: targets,
                        aborted: Some(Box::new(Error::Contract(format!(
                            "dataset update returned {} targets for {} views",
                            new_targets.len(),
                            views.len()
                        )))),
                    });
                }
                targets = new_targets;
                dataset_updates.push(step);
            }
            Err(e) => {
                return Ok(FinetuneOutcome {
                    scene,
                    log,
                    dataset_updates,
                    final_targets: targets,
                    aborted: Some(Box::new(e)),
                });
            }
        }

        for _ in 0..schedule.k_int {
            let view_index = step % views.len();
            let view = &views[view_index];
            let rendered = render(&scene, view, &options);
            let (loss, grad_image) = compute_loss(&rendered.color, &targets[view_index], schedule.lambda)?;
            let grads = render_backward(&scene, view, &grad_image, &options)?;

            if scene.trainable.color {
                let flat: Vec<f64> = grads
                    .d_color_logit
                    .iter()
                    .flat_map(|g| [g.x, g.y, g.z])
                    .collect();
                adam_color.step(&mut color_params, &flat);
            }
            if scene.trainable.opacity {
                adam_opacity.step(&mut opacity_params, &grads.d_opacity_logit);
            }
            for (i, r) in scene.records.iter_mut().enumerate() {
                r.color_logit.x = color_params[3 * i];
                r.color_logit.y = color_params[3 * i + 1];
                r.color_logit.z = color_params[3 * i + 2];
                r.opacity_logit = opacity_params[i];
            }

            log.push(StepLog {
                step,
                view_id: view.view_id,
                l1: loss.l1,
                ssim: loss.ssim,
                total: loss.total,
            });
            step += 1;
        }
    }

    Ok(FinetuneOutcome {
        scene,
        log,
        dataset_updates,
        final_targets: targets,
        aborted: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, UnitQuaternion, Vector3};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::splat::{logit, GaussianRecord};

    fn test_view(id: u32) -> CameraView {
        let angle = id as f64 * 0.08;
        let rotation =
            nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), angle).into_inner();
        let center = Vector3::new(angle.sin() * -4.0, 0.0, -4.0 * angle.cos());
        CameraView::new(
            id,
            48,
            48,
            40.0,
            40.0,
            24.0,
            24.0,
            rotation,
            -(rotation * center),
        )
        .unwrap()
    }

    fn blob_scene(count: usize, seed: u64) -> GaussianScene {
        let mut rng = StdRng::seed_from_u64(seed);
        let records = (0..count)
            .map(|_| GaussianRecord {
                position: Vector3::new(
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-0.4..0.4),
                ),
                log_scale: Vector3::new(
                    rng.random_range(-2.0..-1.0),
                    rng.random_range(-2.0..-1.0),
                    rng.random_range(-2.0..-1.0),
                ),
                rotation: UnitQuaternion::identity(),
                color_logit: Vector3::new(
                    logit(rng.random_range(0.4..0.8)),
                    logit(rng.random_range(0.4..0.8)),
                    logit(rng.random_range(0.4..0.8)),
                ),
                opacity_logit: logit(rng.random_range(0.5..0.9)),
            })
            .collect();
        GaussianScene::new(records)
    }

    #[test]
    fn identity_relight_is_a_fixed_point() {
        let scene = blob_scene(40, 1);
        let views: Vec<CameraView> = (0..3).map(test_view).collect();
        let options = RenderOptions::default();
        let initial = render_all_views(&scene, &views, &options);
        let schedule = TuneSchedule {
            k_int: 12,
            k_reap: 2,
            ..Default::default()
        };
        let outcome = finetune(&scene, &views, &initial, &schedule, |renders| {
            Ok(renders.to_vec())
        })
        .unwrap();
        assert!(outcome.aborted.is_none());
        let initial_loss = outcome.log.first().unwrap().total;
        for entry in &outcome.log {
            assert!(
                (entry.total - initial_loss).abs() < 1e-6,
                "loss drifted at step {}: {} vs {}",
                entry.step,
                entry.total,
                initial_loss
            );
        }
        // Parameters must not have moved at all.
        for (a, b) in scene.records.iter().zip(outcome.scene.records.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn frozen_fields_stay_bit_identical() {
        let scene = blob_scene(30, 2);
        let views: Vec<CameraView> = (0..2).map(test_view).collect();
        let options = RenderOptions::default();
        let initial = render_all_views(&scene, &views, &options);
        let darkened: Vec<RgbImageF> = initial.iter().map(|img| img.map(|v| v * 0.5)).collect();
        let schedule = TuneSchedule {
            k_int: 20,
            k_reap: 2,
            ..Default::default()
        };
        let outcome = finetune(&scene, &views, &initial, &schedule, |_| Ok(darkened.clone()))
            .unwrap();
        assert!(outcome.aborted.is_none());
        assert_eq!(outcome.dataset_updates.len(), 2);
        let mut changed = false;
        for (before, after) in scene.records.iter().zip(outcome.scene.records.iter()) {
            assert_eq!(before.position, after.position);
            assert_eq!(before.log_scale, after.log_scale);
            assert_eq!(before.rotation, after.rotation);
            changed |= before.color_logit != after.color_logit
                || before.opacity_logit != after.opacity_logit;
        }
        assert!(changed, "training never moved the trainable fields");
    }

    #[test]
    fn relight_failure_aborts_with_partial_progress() {
        let scene = blob_scene(10, 3);
        let views: Vec<CameraView> = (0..2).map(test_view).collect();
        let options = RenderOptions::default();
        let initial = render_all_views(&scene, &views, &options);
        let schedule = TuneSchedule {
            k_int: 5,
            k_reap: 3,
            ..Default::default()
        };
        let mut calls = 0;
        let outcome = finetune(&scene, &views, &initial, &schedule, |renders| {
            calls += 1;
            if calls == 2 {
                Err(Error::Adapter("backend fell over".into()))
            } else {
                Ok(renders.to_vec())
            }
        })
        .unwrap();
        assert!(outcome.aborted.is_some());
        assert_eq!(outcome.log.len(), 5); // one epoch completed
        assert_eq!(outcome.dataset_updates, vec![0]);
    }
}
