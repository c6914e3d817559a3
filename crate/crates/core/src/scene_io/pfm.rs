//! PFM float raster reader/writer.
//!
//! Header: `Pf` (one channel) or `PF` (three channels), a dimensions line,
//! and a scale line whose sign gives the payload endianness (negative =
//! little-endian). Rows are stored bottom-up in the file, per the format's
//! convention; in memory all rasters are top-down, so reading and writing
//! flip the row order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::Error;
use crate::Result;

use super::{DepthMap, NormalMap};

#[derive(Debug, Clone, PartialEq)]
pub struct PfmData {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// Row-major, top-down, channel-interleaved.
    pub values: Vec<f32>,
}

fn read_token<R: BufRead>(reader: &mut R, what: &str) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    // Skip leading whitespace.
    loop {
        if reader.read(&mut byte)? == 0 {
            return Err(Error::Format(format!("PFM truncated before {what}")));
        }
        if !byte[0].is_ascii_whitespace() {
            token.push(byte[0]);
            break;
        }
    }
    loop {
        if reader.read(&mut byte)? == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            break;
        }
        token.push(byte[0]);
    }
    String::from_utf8(token).map_err(|_| Error::Format(format!("PFM: non-ASCII {what}")))
}

/// Read any PFM file into a top-down raster.
pub fn read_pfm(path: &Path) -> Result<PfmData> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut reader = BufReader::new(file);

    let magic = read_token(&mut reader, "magic")?;
    let channels = match magic.as_str() {
        "Pf" => 1u32,
        "PF" => 3u32,
        other => return Err(Error::Format(format!("PFM: bad magic '{other}'"))),
    };
    let width: u32 = read_token(&mut reader, "width")?
        .parse()
        .map_err(|_| Error::Format("PFM: bad width".into()))?;
    let height: u32 = read_token(&mut reader, "height")?
        .parse()
        .map_err(|_| Error::Format("PFM: bad height".into()))?;
    let scale: f32 = read_token(&mut reader, "scale")?
        .parse()
        .map_err(|_| Error::Format("PFM: bad scale".into()))?;
    if scale == 0.0 {
        return Err(Error::Format("PFM: zero scale".into()));
    }
    let little_endian = scale < 0.0;

    let count = (width as usize) * (height as usize) * (channels as usize);
    let mut raw = vec![0u8; count * 4];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::Format("PFM payload truncated".into()))?;

    let mut bottom_up = Vec::with_capacity(count);
    for chunk in raw.chunks_exact(4) {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        bottom_up.push(if little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        });
    }

    // Normalize storage order (bottom-up in file) to top-down in memory.
    let row_len = (width as usize) * (channels as usize);
    let mut values = Vec::with_capacity(count);
    for y in (0..height as usize).rev() {
        values.extend_from_slice(&bottom_up[y * row_len..(y + 1) * row_len]);
    }

    Ok(PfmData {
        width,
        height,
        channels,
        values,
    })
}

/// Write a top-down raster as a little-endian PFM file.
pub fn write_pfm(path: &Path, data: &PfmData) -> Result<()> {
    if data.channels != 1 && data.channels != 3 {
        return Err(Error::Format(format!(
            "PFM supports 1 or 3 channels, got {}",
            data.channels
        )));
    }
    let expected = (data.width as usize) * (data.height as usize) * (data.channels as usize);
    if data.values.len() != expected {
        return Err(Error::Shape(format!(
            "PFM buffer has {} values, expected {expected}",
            data.values.len()
        )));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", if data.channels == 1 { "Pf" } else { "PF" })?;
    writeln!(w, "{} {}", data.width, data.height)?;
    writeln!(w, "-1.0")?;
    let row_len = (data.width as usize) * (data.channels as usize);
    for y in (0..data.height as usize).rev() {
        for v in &data.values[y * row_len..(y + 1) * row_len] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a one-channel PFM as a depth map. Non-finite or negative values are
/// coerced to the invalid sentinel (0.0); `depth_scale` rescales valid depths
/// into scene units.
pub fn load_depth(path: &Path, depth_scale: f32) -> Result<DepthMap> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 1 {
        return Err(Error::Format(format!(
            "{}: expected 1-channel PFM for depth, got {} channels",
            path.display(),
            pfm.channels
        )));
    }
    let values = pfm
        .values
        .into_iter()
        .map(|v| {
            if v.is_finite() && v > 0.0 {
                v * depth_scale
            } else {
                super::INVALID_DEPTH
            }
        })
        .collect();
    Ok(DepthMap::new(pfm.width, pfm.height, values))
}

pub fn save_depth(depth: &DepthMap, path: &Path) -> Result<()> {
    write_pfm(
        path,
        &PfmData {
            width: depth.width,
            height: depth.height,
            channels: 1,
            values: depth.values.clone(),
        },
    )
}

/// Load a three-channel PFM as camera-space unit normals. Vectors whose norm
/// deviates from one by more than 1e-4 are renormalized; near-zero vectors
/// become the invalid sentinel.
pub fn load_normals(path: &Path) -> Result<NormalMap> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 3 {
        return Err(Error::Format(format!(
            "{}: expected 3-channel PFM for normals, got {} channels",
            path.display(),
            pfm.channels
        )));
    }
    let mut values = pfm.values;
    for n in values.chunks_exact_mut(3) {
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if !norm.is_finite() || norm < 1e-6 {
            n.fill(0.0);
        } else if (norm - 1.0).abs() > 1e-4 {
            n[0] /= norm;
            n[1] /= norm;
            n[2] /= norm;
        }
    }
    Ok(NormalMap::new(pfm.width, pfm.height, values))
}

pub fn save_normals(normals: &NormalMap, path: &Path) -> Result<()> {
    write_pfm(
        path,
        &PfmData {
            width: normals.width,
            height: normals.height,
            channels: 3,
            values: normals.values.clone(),
        },
    )
}
