//! Camera list (de)serialization.
//!
//! The file is a JSON array of objects; rotation is the row-major 3x3
//! world-to-camera matrix, translation the world-to-camera vector. A missing
//! principal point defaults to the image center.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::Error;
use crate::Result;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJson {
    view_id: u32,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    rotation: [f64; 9],
    translation: [f64; 3],
}

/// Parse a camera list, enforcing all view invariants and returning views
/// sorted by `view_id`.
pub fn load_cameras_from_str(text: &str) -> Result<Vec<CameraView>> {
    let raw: Vec<CameraJson> =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("camera JSON: {e}")))?;
    let mut views = Vec::with_capacity(raw.len());
    for cam in raw {
        let rotation = Matrix3::from_row_slice(&cam.rotation);
        let translation = Vector3::from_column_slice(&cam.translation);
        let view = CameraView::new(
            cam.view_id,
            cam.width,
            cam.height,
            cam.fx,
            cam.fy,
            cam.cx.unwrap_or(cam.width as f64 / 2.0),
            cam.cy.unwrap_or(cam.height as f64 / 2.0),
            rotation,
            translation,
        )?;
        views.push(view);
    }
    views.sort_by_key(|v| v.view_id);
    for pair in views.windows(2) {
        if pair[0].view_id == pair[1].view_id {
            return Err(Error::Validation(format!(
                "duplicate view_id {}",
                pair[0].view_id
            )));
        }
    }
    Ok(views)
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraView>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    load_cameras_from_str(&text)
}

pub fn save_cameras(views: &[CameraView], path: &Path) -> Result<()> {
    let raw: Vec<CameraJson> = views
        .iter()
        .map(|v| CameraJson {
            view_id: v.view_id,
            width: v.width,
            height: v.height,
            fx: v.fx,
            fy: v.fy,
            cx: Some(v.cx),
            cy: Some(v.cy),
            rotation: {
                let mut r = [0.0; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        r[i * 3 + j] = v.rotation[(i, j)];
                    }
                }
                r
            },
            translation: [v.translation.x, v.translation.y, v.translation.z],
        })
        .collect();
    let text = serde_json::to_string_pretty(&raw)
        .map_err(|e| Error::Format(format!("camera JSON: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}
