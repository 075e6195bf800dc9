//! Visual exports: binary PGM/PPM pixmaps and PNG.

use std::fs;
use std::path::Path;

use satfusion_core::Tensor;

use crate::error::{IoError, Result};

/// `[0, 1]` to `[0, 255]` with round-half-up; out-of-range values are clipped.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

fn channels(t: &Tensor<f32>, path: &Path) -> Result<(usize, usize, usize)> {
    let (h, w, c) = t.hwc().map_err(|e| IoError::format(path, e.to_string()))?;
    if c != 1 && c != 3 {
        return Err(IoError::format(path, format!("cannot export {c} channels, need 1 or 3")));
    }
    Ok((h, w, c))
}

/// Binary pixmap bytes: P5 for one channel, P6 for three.
pub fn pixmap_bytes(t: &Tensor<f32>, path: &Path) -> Result<Vec<u8>> {
    let (h, w, c) = channels(t, path)?;
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn export_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let bytes = pixmap_bytes(t, path)?;
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// Per-pixel mean absolute channel difference, scaled so the largest error is 1.
pub fn error_map(sr: &Tensor<f32>, gt: &Tensor<f32>) -> satfusion_core::Result<Tensor<f32>> {
    sr.check_same_shape(gt)?;
    let (h, w, c) = sr.hwc()?;
    let per_pixel: Vec<f64> = sr
        .data()
        .chunks_exact(c)
        .zip(gt.data().chunks_exact(c))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / c as f64)
        .collect();
    let max = per_pixel.iter().cloned().fold(0.0, f64::max);
    let scaled = per_pixel.iter().map(|&e| if max > 0.0 { (e / max) as f32 } else { 0.0 }).collect();
    Tensor::image(h, w, 1, scaled)
}

pub fn export_error_map(sr: &Tensor<f32>, gt: &Tensor<f32>, path: &Path) -> Result<()> {
    let map = error_map(sr, gt).map_err(|e| IoError::format(path, e.to_string()))?;
    export_image(&map, path)
}

/// PNG with the same byte mapping as the pixmap export.
pub fn export_png(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w, c) = channels(t, path)?;
    let bytes: Vec<u8> = t.data().iter().map(|&v| to_byte(v)).collect();
    let color = if c == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
    image::save_buffer(path, &bytes, w as u32, h as u32, color).map_err(|source| IoError::Image { path: path.to_path_buf(), source })
}
