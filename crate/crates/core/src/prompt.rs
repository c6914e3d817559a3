//! Lighting priors: the constrained answer template, object centroids, and
//! light-position resolution.
//!
//! The vision-language model and the segmenter run out of process; this
//! module consumes their outputs (an answer line, a mask PNG) and owns the
//! geometry that turns them into a 3D light position in reference-view
//! camera coordinates.

use std::path::Path;
use std::process::Command;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::Error;
use crate::scene_io::{DepthMap, ObjectMask};
use crate::Result;

/// The fixed answer format the adapter must produce.
pub const ANSWER_TEMPLATE: &str = "Light is on the {DIRECTION} of the {OBJECT}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Top,
    Bottom,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Top => "top",
            Direction::Bottom => "bottom",
        }
    }

    /// Unit offset in OpenCV camera axes (x right, y down, z forward).
    pub fn unit_offset(&self) -> Vector3<f64> {
        match self {
            Direction::Left => Vector3::new(-1.0, 0.0, 0.0),
            Direction::Right => Vector3::new(1.0, 0.0, 0.0),
            Direction::Top => Vector3::new(0.0, -1.0, 0.0),
            Direction::Bottom => Vector3::new(0.0, 1.0, 0.0),
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            "top" => Ok(Direction::Top),
            "bottom" => Ok(Direction::Bottom),
            other => Err(Error::Vocabulary(format!(
                "direction '{other}' is not one of left/right/top/bottom"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LightingPrior {
    pub direction: Direction,
    pub object_prompt: String,
}

/// Resolved 3D light position in reference-view camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightPosition {
    pub position: [f64; 3],
}

impl LightPosition {
    pub fn new(p: Vector3<f64>) -> Self {
        LightPosition {
            position: [p.x, p.y, p.z],
        }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.position)
    }
}

/// Find `needle` in `haystack` ignoring ASCII case, returning the byte offset.
fn find_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| {
        h[i..i + n.len()]
            .iter()
            .zip(n.iter())
            .all(|(a, b)| a.eq_ignore_ascii_case(b))
    })
}

/// Parse an adapter answer against the fixed template, case-insensitively.
/// The object phrase is captured verbatim (whitespace-trimmed); the template
/// is split at the first " of the " after the prefix so object phrases that
/// themselves contain "of the" survive.
pub fn parse_lvlm_answer(answer: &str) -> Result<LightingPrior> {
    let trimmed = answer.trim();
    const PREFIX: &str = "light is on the ";
    let Some(0) = find_ascii_ci(trimmed, PREFIX) else {
        return Err(Error::Parse(format!(
            "answer does not match template '{ANSWER_TEMPLATE}': '{answer}'"
        )));
    };
    let rest = &trimmed[PREFIX.len()..];
    const SEP: &str = " of the ";
    let Some(sep_at) = find_ascii_ci(rest, SEP) else {
        return Err(Error::Parse(format!(
            "answer does not match template '{ANSWER_TEMPLATE}': '{answer}'"
        )));
    };
    let direction: Direction = rest[..sep_at].trim().parse()?;
    let object_prompt = rest[sep_at + SEP.len()..].trim();
    if object_prompt.is_empty() {
        return Err(Error::Parse(format!(
            "answer has an empty object phrase: '{answer}'"
        )));
    }
    Ok(LightingPrior {
        direction,
        object_prompt: object_prompt.to_string(),
    })
}

/// Render a prior back into the fixed answer format.
pub fn render_template(prior: &LightingPrior) -> String {
    format!(
        "Light is on the {} of the {}",
        prior.direction.as_str(),
        prior.object_prompt
    )
}

/// Arithmetic mean of the set pixels' centers.
pub fn mask_centroid(mask: &ObjectMask) -> Result<[f64; 2]> {
    let mut sum = [0.0f64; 2];
    let mut count = 0usize;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                sum[0] += x as f64 + 0.5;
                sum[1] += y as f64 + 0.5;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Domain("mask has no set pixels".into()));
    }
    Ok([sum[0] / count as f64, sum[1] / count as f64])
}

/// Depth at the centroid pixel, falling back to the median valid depth in a
/// 5x5 window when the pixel itself is invalid.
pub fn depth_at_centroid(depth: &DepthMap, centroid: [f64; 2]) -> Result<f64> {
    let px = (centroid[0].floor() as i64).clamp(0, depth.width as i64 - 1) as u32;
    let py = (centroid[1].floor() as i64).clamp(0, depth.height as i64 - 1) as u32;
    if depth.is_valid(px, py) {
        return Ok(depth.get(px, py) as f64);
    }
    let mut window: Vec<f32> = Vec::with_capacity(25);
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            let x = px as i64 + dx;
            let y = py as i64 + dy;
            if x < 0 || y < 0 || x >= depth.width as i64 || y >= depth.height as i64 {
                continue;
            }
            if depth.is_valid(x as u32, y as u32) {
                window.push(depth.get(x as u32, y as u32));
            }
        }
    }
    if window.is_empty() {
        return Err(Error::Domain(format!(
            "no valid depth in the 5x5 window around pixel ({px}, {py})"
        )));
    }
    window.sort_by(f32::total_cmp);
    Ok(window[window.len() / 2] as f64)
}

/// Initial light-position offset. The relative form scales with the depth of
/// the reference object so the light sits at a plausible scene scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum DeltaInit {
    Absolute([f64; 3]),
    Relative([f64; 3]),
}

impl Default for DeltaInit {
    /// Diagonally above the object on the camera-facing side: negative y
    /// (up) and negative z (toward the camera), half the object depth each.
    fn default() -> Self {
        DeltaInit::Relative([0.0, -0.5, -0.5])
    }
}

impl DeltaInit {
    pub fn resolve(&self, d_ref: f64) -> Vector3<f64> {
        match self {
            DeltaInit::Absolute(v) => Vector3::from_column_slice(v),
            DeltaInit::Relative(v) => Vector3::from_column_slice(v) * d_ref,
        }
    }
}

/// Unproject the object centroid at its depth and apply the initial offset:
/// the light starts relative to the object's surface point.
pub fn initial_light_position(
    centroid: [f64; 2],
    depth_ref: &DepthMap,
    view: &CameraView,
    delta_init: &DeltaInit,
) -> Result<LightPosition> {
    let d_ref = depth_at_centroid(depth_ref, centroid)?;
    let surface = view.unproject(centroid, d_ref)?;
    Ok(LightPosition::new(surface + delta_init.resolve(d_ref)))
}

/// Shift the light along the prompted direction by `magnitude` scene units.
pub fn apply_direction_offset(
    light: &LightPosition,
    direction: Direction,
    magnitude: f64,
) -> LightPosition {
    LightPosition::new(light.vector() + direction.unit_offset() * magnitude)
}

/// Invoke the external answer adapter: `command... <image> <instruction>
/// <template>`, expecting exactly one answer line on stdout.
pub fn run_lvlm_adapter(command: &[String], image: &Path, instruction: &str) -> Result<String> {
    let (program, leading) = command
        .split_first()
        .ok_or_else(|| Error::Config("empty answer-adapter command".into()))?;
    let output = Command::new(program)
        .args(leading)
        .arg(image)
        .arg(instruction)
        .arg(ANSWER_TEMPLATE)
        .output()
        .map_err(|e| Error::Adapter(format!("failed to launch '{program}': {e}")))?;
    if !output.status.success() {
        return Err(Error::Adapter(format!(
            "answer adapter exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let answer = stdout.trim();
    if answer.is_empty() || answer.contains('\n') {
        return Err(Error::Adapter(format!(
            "answer adapter must print exactly one line, got: '{answer}'"
        )));
    }
    Ok(answer.to_string())
}

/// Invoke the external segmenter adapter: `command... <image> <object>
/// <output-mask-path>`; the adapter must write a mask PNG to the given path.
pub fn run_segmenter_adapter(
    command: &[String],
    image: &Path,
    object_prompt: &str,
    output_mask: &Path,
) -> Result<()> {
    let (program, leading) = command
        .split_first()
        .ok_or_else(|| Error::Config("empty segmenter-adapter command".into()))?;
    let output = Command::new(program)
        .args(leading)
        .arg(image)
        .arg(object_prompt)
        .arg(output_mask)
        .output()
        .map_err(|e| Error::Adapter(format!("failed to launch '{program}': {e}")))?;
    if !output.status.success() {
        return Err(Error::Adapter(format!(
            "segmenter adapter exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    if !output_mask.exists() {
        return Err(Error::Contract(format!(
            "segmenter adapter wrote no mask at {}",
            output_mask.display()
        )));
    }
    Ok(())
}
