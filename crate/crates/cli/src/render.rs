//! Mask overlays on frame images.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use jitwin_core::mask::BinaryMask;

pub const TINT: Rgb<u8> = Rgb([255, 0, 0]);
pub const OPACITY: f64 = 0.5;

/// Alpha-blends `TINT` over every foreground pixel.
pub fn overlay(frame: &RgbImage, mask: &BinaryMask) -> Result<RgbImage, String> {
    if frame.dimensions() != mask.dims() {
        let (fw, fh) = frame.dimensions();
        return Err(format!(
            "frame is {fw}x{fh} but the mask is {}x{}",
            mask.width(),
            mask.height()
        ));
    }
    let mut out = frame.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask.get(x, y) {
            for c in 0..3 {
                let v = (1.0 - OPACITY) * px[c] as f64 + OPACITY * TINT[c] as f64;
                px[c] = v.round() as u8;
            }
        }
    }
    Ok(out)
}

/// Image files in `dir`, sorted by name; the k-th is frame k.
pub fn frame_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}
