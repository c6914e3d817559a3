//! Binary little-endian PLY reader/writer for Gaussian scenes.
//!
//! The vertex layout follows the de-facto Gaussian-splat convention:
//! `x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity scale_0..2 rot_0..3`,
//! all float32. Only degree-0 appearance is used: `f_rest_*` is ignored on
//! load and written as zeros, `rot_*` is a (w, x, y, z) quaternion.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::Error;
use crate::splat::{GaussianRecord, GaussianScene};
use crate::Result;

const REQUIRED_FIELDS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

const F_REST_COUNT: usize = 45;

fn read_header_line<R: BufRead>(reader: &mut R) -> Result<String> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(Error::Format("unexpected end of PLY header".into()));
    }
    Ok(line.trim_end().to_string())
}

/// Load a Gaussian scene from a binary little-endian PLY file.
pub fn load_scene(path: &Path) -> Result<GaussianScene> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut reader = BufReader::new(file);

    if read_header_line(&mut reader)? != "ply" {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let format = read_header_line(&mut reader)?;
    if format != "format binary_little_endian 1.0" {
        return Err(Error::Format(format!(
            "unsupported PLY format line: '{format}'"
        )));
    }

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    loop {
        let line = read_header_line(&mut reader)?;
        if line == "end_header" {
            break;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("comment") => {}
            Some("element") => {
                let name = parts.next().unwrap_or_default();
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad element line: '{line}'")))?;
                if name == "vertex" {
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else if count > 0 {
                    return Err(Error::Format(format!(
                        "unsupported PLY element '{name}' with {count} entries"
                    )));
                } else {
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let ty = parts.next().unwrap_or_default();
                let name = parts.next().unwrap_or_default();
                if ty != "float" {
                    return Err(Error::Format(format!(
                        "property '{name}' has unsupported type '{ty}' (expected float)"
                    )));
                }
                properties.push(name.to_string());
            }
            _ => return Err(Error::Format(format!("unrecognized header line: '{line}'"))),
        }
    }

    let vertex_count =
        vertex_count.ok_or_else(|| Error::Format("PLY has no vertex element".into()))?;

    let mut field_index = [0usize; REQUIRED_FIELDS.len()];
    for (slot, field) in REQUIRED_FIELDS.iter().enumerate() {
        field_index[slot] = properties
            .iter()
            .position(|p| p == field)
            .ok_or_else(|| Error::Format(format!("missing required field '{field}'")))?;
    }

    let stride = properties.len();
    let mut raw = vec![0u8; vertex_count * stride * 4];
    reader.read_exact(&mut raw).map_err(|_| {
        Error::Format(format!(
            "PLY payload truncated: expected {vertex_count} vertices x {stride} floats"
        ))
    })?;

    let mut records = Vec::with_capacity(vertex_count);
    let mut values = vec![0f32; REQUIRED_FIELDS.len()];
    for i in 0..vertex_count {
        let base = i * stride * 4;
        for (slot, &idx) in field_index.iter().enumerate() {
            let off = base + idx * 4;
            let v = f32::from_le_bytes([raw[off], raw[off + 1], raw[off + 2], raw[off + 3]]);
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value in field '{}' of record {i}",
                    REQUIRED_FIELDS[slot]
                )));
            }
            values[slot] = v;
        }
        let quat = Quaternion::new(
            values[10] as f64,
            values[11] as f64,
            values[12] as f64,
            values[13] as f64,
        );
        if quat.norm() < 1e-12 {
            return Err(Error::Data(format!(
                "zero-norm quaternion in record {i}"
            )));
        }
        records.push(GaussianRecord {
            position: Vector3::new(values[0] as f64, values[1] as f64, values[2] as f64),
            color_logit: Vector3::new(values[3] as f64, values[4] as f64, values[5] as f64),
            opacity_logit: values[6] as f64,
            log_scale: Vector3::new(values[7] as f64, values[8] as f64, values[9] as f64),
            rotation: UnitQuaternion::from_quaternion(quat),
        });
    }
    Ok(GaussianScene::new(records))
}

/// Save a Gaussian scene in the de-facto binary layout.
pub fn save_scene(scene: &GaussianScene, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", scene.len())?;
    for name in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property float {name}")?;
    }
    for i in 0..3 {
        writeln!(w, "property float f_dc_{i}")?;
    }
    for i in 0..F_REST_COUNT {
        writeln!(w, "property float f_rest_{i}")?;
    }
    writeln!(w, "property float opacity")?;
    for i in 0..3 {
        writeln!(w, "property float scale_{i}")?;
    }
    for i in 0..4 {
        writeln!(w, "property float rot_{i}")?;
    }
    writeln!(w, "end_header")?;

    let mut row: Vec<f32> = Vec::with_capacity(6 + 3 + F_REST_COUNT + 1 + 3 + 4);
    for record in &scene.records {
        row.clear();
        row.extend_from_slice(&[
            record.position.x as f32,
            record.position.y as f32,
            record.position.z as f32,
            0.0,
            0.0,
            0.0,
            record.color_logit.x as f32,
            record.color_logit.y as f32,
            record.color_logit.z as f32,
        ]);
        row.extend(std::iter::repeat_n(0.0f32, F_REST_COUNT));
        row.push(record.opacity_logit as f32);
        row.extend_from_slice(&[
            record.log_scale.x as f32,
            record.log_scale.y as f32,
            record.log_scale.z as f32,
        ]);
        let q = record.rotation.quaternion();
        row.extend_from_slice(&[q.w as f32, q.i as f32, q.j as f32, q.k as f32]);
        for v in &row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
