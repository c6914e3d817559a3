//! Latent-space encoding of illumination maps and source images.
//!
//! The encoder abstraction stands in for a pretrained image encoder: any
//! implementation must map an `H x W` image onto an `H/8 x W/8 x C` grid.
//! The built-in reference encoder is deliberately trivial (8x8 area
//! averaging, four channels) so the pipeline and its tests never depend on
//! pretrained weights; real deployments plug an external encoder in behind
//! the same trait.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::illumination::IlluminationMap;
use crate::image_buf::RgbImageF;
use crate::Result;

/// Latent grid for one view: `height x width x channels`, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub source_view: u32,
    pub data: Vec<f32>,
}

impl LatentBlock {
    pub fn new(height: u32, width: u32, channels: u32, source_view: u32) -> Self {
        LatentBlock {
            height,
            width,
            channels,
            source_view,
            data: vec![0.0; (height as usize) * (width as usize) * (channels as usize)],
        }
    }

    #[inline]
    pub fn idx(&self, x: u32, y: u32, c: u32) -> usize {
        ((y as usize) * (self.width as usize) + (x as usize)) * (self.channels as usize)
            + (c as usize)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u32) -> f32 {
        self.data[self.idx(x, y, c)]
    }
}

pub trait LatentEncoder {
    fn channel_count(&self) -> u32;
    fn deterministic(&self) -> bool;
    /// Encode an image whose dimensions are divisible by 8 into an
    /// `H/8 x W/8 x C` latent grid.
    fn encode(&self, image: &RgbImageF, source_view: u32) -> Result<LatentBlock>;
}

/// Built-in encoder: 8x8 area averaging. Channels 0-2 are the block-mean
/// RGB, channel 3 the Rec. 709 luminance of those means.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceEncoder;

/// The pretrained encoders this stands in for downsample by 8.
pub const DOWNSAMPLE: u32 = 8;

pub fn reference_encoder() -> ReferenceEncoder {
    ReferenceEncoder
}

impl LatentEncoder for ReferenceEncoder {
    fn channel_count(&self) -> u32 {
        4
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn encode(&self, image: &RgbImageF, source_view: u32) -> Result<LatentBlock> {
        if image.width % DOWNSAMPLE != 0 || image.height % DOWNSAMPLE != 0 {
            return Err(Error::Shape(format!(
                "image dimensions {}x{} are not divisible by {DOWNSAMPLE}",
                image.width, image.height
            )));
        }
        let lw = image.width / DOWNSAMPLE;
        let lh = image.height / DOWNSAMPLE;
        let mut block = LatentBlock::new(lh, lw, 4, source_view);
        let inv_area = 1.0 / ((DOWNSAMPLE * DOWNSAMPLE) as f64);
        for by in 0..lh {
            for bx in 0..lw {
                let mut acc = [0.0f64; 3];
                for dy in 0..DOWNSAMPLE {
                    for dx in 0..DOWNSAMPLE {
                        let p = image.get(bx * DOWNSAMPLE + dx, by * DOWNSAMPLE + dy);
                        acc[0] += p[0];
                        acc[1] += p[1];
                        acc[2] += p[2];
                    }
                }
                let mean = [acc[0] * inv_area, acc[1] * inv_area, acc[2] * inv_area];
                let luma = 0.2126 * mean[0] + 0.7152 * mean[1] + 0.0722 * mean[2];
                let base = block.idx(bx, by, 0);
                block.data[base] = mean[0] as f32;
                block.data[base + 1] = mean[1] as f32;
                block.data[base + 2] = mean[2] as f32;
                block.data[base + 3] = luma as f32;
            }
        }
        Ok(block)
    }
}

/// Replicate a scalar intensity map into a three-channel image for encoding.
pub fn illumination_to_rgb(illum: &IlluminationMap) -> RgbImageF {
    let mut img = RgbImageF::new(illum.width, illum.height);
    for y in 0..illum.height {
        for x in 0..illum.width {
            let v = illum.get(x, y);
            img.set(x, y, [v, v, v]);
        }
    }
    img
}

/// Build the initialization latent for one view: the encoded illumination
/// map, noised along a variance-preserving schedule at fraction
/// `noise_level`, channel-concatenated with the encoded source image.
///
/// `noise_level` interpolates the schedule's retained signal linearly from
/// all-signal (0) to all-noise (1); the draw is deterministic in `seed`.
pub fn encode_init_latent(
    illum: &IlluminationMap,
    source: &RgbImageF,
    encoder: &dyn LatentEncoder,
    noise_level: f64,
    seed: u64,
) -> Result<LatentBlock> {
    if illum.width != source.width || illum.height != source.height {
        return Err(Error::Shape(format!(
            "illumination {}x{} does not match source {}x{}",
            illum.width, illum.height, source.width, source.height
        )));
    }
    if source.width % DOWNSAMPLE != 0 || source.height % DOWNSAMPLE != 0 {
        return Err(Error::Shape(format!(
            "dimensions {}x{} are not divisible by {DOWNSAMPLE}",
            source.width, source.height
        )));
    }
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::Domain(format!(
            "noise_level must lie in [0,1], got {noise_level}"
        )));
    }

    let source_view = 0; // caller overwrites below if needed
    let l_d = encoder.encode(&illumination_to_rgb(illum), source_view)?;
    let l_i = encoder.encode(source, source_view)?;
    let c = encoder.channel_count();
    for (name, block) in [("illumination", &l_d), ("source", &l_i)] {
        if block.channels != c || block.width != source.width / 8 || block.height != source.height / 8
        {
            return Err(Error::Contract(format!(
                "encoder produced a {}x{}x{} latent for the {name} image, expected {}x{}x{c}",
                block.width,
                block.height,
                block.channels,
                source.width / 8,
                source.height / 8,
            )));
        }
    }

    let mut out = LatentBlock::new(l_d.height, l_d.width, 2 * c, source_view);
    // Variance-preserving forward schedule, alpha-bar interpolated linearly.
    let alpha_bar = 1.0 - noise_level;
    let signal = alpha_bar.sqrt();
    let sigma = (1.0 - alpha_bar).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for y in 0..out.height {
        for x in 0..out.width {
            for ch in 0..c {
                let clean = l_d.get(x, y, ch);
                let value = if noise_level == 0.0 {
                    clean
                } else {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    (signal * clean as f64 + sigma * eps) as f32
                };
                let i = out.idx(x, y, ch);
                out.data[i] = value;
            }
            for ch in 0..c {
                let i = out.idx(x, y, c + ch);
                out.data[i] = l_i.get(x, y, ch);
            }
        }
    }
    Ok(out)
}

const MAGIC: &[u8; 4] = b"GSLL";

/// Serialize a latent block: 16-byte header (magic "GSLL", u32 height,
/// u32 width, u32 channels, little-endian) followed by the flat float32 data.
pub fn save_latent(block: &LatentBlock, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&block.height.to_le_bytes())?;
    w.write_all(&block.width.to_le_bytes())?;
    w.write_all(&block.channels.to_le_bytes())?;
    for v in &block.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_latent(path: &Path, source_view: u32) -> Result<LatentBlock> {
    let mut file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| Error::Format("latent file shorter than its header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("latent file missing GSLL magic".into()));
    }
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let width = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let channels = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let count = (height as usize) * (width as usize) * (channels as usize);
    let mut raw = vec![0u8; count * 4];
    file.read_exact(&mut raw)
        .map_err(|_| Error::Format("latent file payload truncated".into()))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(LatentBlock {
        height,
        width,
        channels,
        source_view,
        data,
    })
}
