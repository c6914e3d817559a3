//! PNG I/O: 8-bit RGB images and single-channel masks.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use crate::error::Error;
use crate::image_buf::{from_u8, to_u8, RgbImageF};
use crate::Result;

use super::ObjectMask;

pub fn load_image(path: &Path) -> Result<RgbImageF> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (width, height) = (img.width(), img.height());
    let mut out = RgbImageF::new(width, height);
    for (x, y, p) in img.enumerate_pixels() {
        out.set(x, y, [from_u8(p[0]), from_u8(p[1]), from_u8(p[2])]);
    }
    Ok(out)
}

pub fn save_image(img: &RgbImageF, path: &Path) -> Result<()> {
    let mut out = RgbImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let [r, g, b] = img.get(x, y);
            out.put_pixel(x, y, image::Rgb([to_u8(r), to_u8(g), to_u8(b)]));
        }
    }
    out.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Load an 8-bit single-channel PNG; values above 127 are set.
pub fn load_mask(path: &Path) -> Result<ObjectMask> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_luma8();
    let values = img.pixels().map(|p| p[0] > 127).collect();
    Ok(ObjectMask::new(img.width(), img.height(), values))
}

pub fn save_mask(mask: &ObjectMask, path: &Path) -> Result<()> {
    let mut out = GrayImage::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            out.put_pixel(x, y, image::Luma([if mask.get(x, y) { 255 } else { 0 }]));
        }
    }
    out.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Save a scalar field in `[0,1]` as an 8-bit grayscale preview.
pub fn save_gray_png(width: u32, height: u32, values: &[f64], path: &Path) -> Result<()> {
    if values.len() != (width as usize) * (height as usize) {
        return Err(Error::Shape(format!(
            "gray buffer has {} values for {width}x{height}",
            values.len()
        )));
    }
    let mut out = GrayImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let v = values[(y as usize) * (width as usize) + (x as usize)];
            out.put_pixel(x, y, image::Luma([to_u8(v)]));
        }
    }
    out.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn image_round_trip_at_quantized_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = RgbImageF::from_fn(8, 4, |x, y| {
            [
                from_u8((x * 13 % 256) as u8),
                from_u8((y * 31 % 256) as u8),
                from_u8(((x + y) * 7 % 256) as u8),
            ]
        });
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn mask_threshold_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mask = ObjectMask::new(4, 4, (0..16).map(|i| i % 3 == 0).collect());
        save_mask(&mask, &path).unwrap();
        let back = load_mask(&path).unwrap();
        assert_eq!(mask, back);
    }
}
