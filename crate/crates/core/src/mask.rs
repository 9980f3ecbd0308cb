//! Binary masks, the row-major run-length codec and the set/geometry
//! primitives shared by the rest of the engine.
//!
//! Masks are dense `Vec<bool>` grids in memory. Run-length encoding is only
//! used at I/O boundaries (trace files, prediction files).
//!
//! RLE layout: pixels are flattened row-major (`index = y * width + x`), and
//! `counts` alternates background/foreground runs starting with background.
//! The first run may be zero; no other run may be.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1, got {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("bit buffer holds {got} pixels, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("run lengths sum to {got}, expected {expected}")]
    SumMismatch { expected: u64, got: u64 },
    #[error("zero-length run at position {0}")]
    ZeroRun(usize),
    #[error("soft mask value {value} at pixel {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn check_dims(width: u32, height: u32) -> Result<(), MaskError> {
    if width == 0 || height == 0 {
        return Err(MaskError::InvalidDimensions { width, height });
    }
    Ok(())
}

/// Axis-aligned pixel box: top-left corner plus extent.
///
/// Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct Bbox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for Bbox {
    fn from(v: [u32; 4]) -> Self {
        Bbox {
            x: v[0],
            y: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

impl From<Bbox> for [u32; 4] {
    fn from(b: Bbox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl Bbox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Bbox { x, y, w, h }
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Point containment with inclusive edges, so a centroid sitting on the
    /// far edge of a box still counts as inside it.
    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64
            && px <= self.right() as f64
            && py >= self.y as f64
            && py <= self.bottom() as f64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn intersection_area(&self, other: &Bbox) -> u64 {
        let x0 = (self.x as u64).max(other.x as u64);
        let y0 = (self.y as u64).max(other.y as u64);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }
}

/// True iff the boxes share a region of positive area. Boxes that only
/// touch along an edge or a corner do not intersect.
pub fn bbox_intersects(a: &Bbox, b: &Bbox) -> bool {
    a.intersection_area(b) > 0
}

/// Row-major boolean pixel grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-background mask.
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        Ok(BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        })
    }

    pub fn full(width: u32, height: u32) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        m.bits.fill(true);
        Ok(m)
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::LengthMismatch {
                expected,
                got: bits.len(),
            });
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    /// Mask with the given box filled. Parts of the box outside the frame
    /// are clipped.
    pub fn from_bbox(width: u32, height: u32, bbox: &Bbox) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        let x1 = bbox.right().min(width as u64) as u32;
        let y1 = bbox.bottom().min(height as u64) as u32;
        for y in bbox.y.min(height)..y1 {
            for x in bbox.x.min(width)..x1 {
                m.set(x, y, true);
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Tight bounding box of the foreground, `None` for an empty mask.
    pub fn tight_bbox(&self) -> Option<Bbox> {
        let w = self.width as usize;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            any = true;
        }
        any.then(|| Bbox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    fn ensure_same_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// Nearest-neighbour upscale by an integer factor.
    pub fn upscale(&self, factor: u32) -> BinaryMask {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut out = BinaryMask {
            width: w,
            height: h,
            bits: vec![false; w as usize * h as usize],
        };
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, self.get(x / factor, y / factor));
            }
        }
        out
    }

    pub fn to_rle(&self) -> RleMask {
        rle_encode(self)
    }
}

/// Run-length encoded mask, see the module docs for the layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn validate(&self) -> Result<(), MaskError> {
        check_dims(self.width, self.height)?;
        let expected = self.width as u64 * self.height as u64;
        let got: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if got != expected {
            return Err(MaskError::SumMismatch { expected, got });
        }
        if let Some(pos) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(MaskError::ZeroRun(pos + 1));
        }
        Ok(())
    }

    /// Foreground pixel count without decoding.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn decode(&self) -> Result<BinaryMask, MaskError> {
        rle_decode(self)
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in &mask.bits {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        width: mask.width,
        height: mask.height,
        counts,
    }
}

/// Decodes a run-length mask. Only the sum invariant is enforced here;
/// interior zero runs decode harmlessly and are rejected by
/// [`RleMask::validate`] when strictness is wanted.
pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask, MaskError> {
    check_dims(rle.width, rle.height)?;
    let expected = rle.width as u64 * rle.height as u64;
    let got: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if got != expected {
        return Err(MaskError::SumMismatch { expected, got });
    }
    let mut bits = Vec::with_capacity(expected as usize);
    let mut value = false;
    for &c in &rle.counts {
        bits.extend(std::iter::repeat(value).take(c as usize));
        value = !value;
    }
    Ok(BinaryMask {
        width: rle.width,
        height: rle.height,
        bits,
    })
}

/// Intersection over union. Two empty masks score 1.0.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    a.ensure_same_dims(b)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pixel-wise OR over `masks`. An empty list gives an all-background mask
/// of the supplied size.
pub fn mask_union(masks: &[BinaryMask], width: u32, height: u32) -> Result<BinaryMask, MaskError> {
    let mut out = BinaryMask::new(width, height)?;
    for m in masks {
        out.ensure_same_dims(m)?;
        for (o, &b) in out.bits.iter_mut().zip(&m.bits) {
            *o |= b;
        }
    }
    Ok(out)
}

/// Row-major grid of values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl SoftMask {
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(MaskError::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(MaskError::OutOfRange { index, value });
        }
        Ok(SoftMask {
            width,
            height,
            values,
        })
    }

    pub fn from_binary(mask: &BinaryMask) -> SoftMask {
        SoftMask {
            width: mask.width,
            height: mask.height,
            values: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Reads a single-channel PNG; any non-zero luma is foreground.
pub fn read_png(path: &Path) -> Result<BinaryMask, MaskError> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    BinaryMask::from_bits(w, h, img.pixels().map(|p| p.0[0] > 0).collect())
}

/// Writes foreground as 255 and background as 0.
pub fn write_png(mask: &BinaryMask, path: &Path) -> Result<(), MaskError> {
    let buf: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width, mask.height, buf)
        .expect("buffer length matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_rle_json(path: &Path) -> Result<BinaryMask, MaskError> {
    let rle: RleMask = serde_json::from_slice(&std::fs::read(path)?)?;
    rle_decode(&rle)
}

pub fn write_rle_json(mask: &BinaryMask, path: &Path) -> Result<(), MaskError> {
    std::fs::write(path, serde_json::to_vec(&rle_encode(mask))?)?;
    Ok(())
}

/// Loads a mask from `.png` or RLE `.json`, chosen by extension.
pub fn read_mask_file(path: &Path) -> Result<BinaryMask, MaskError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path),
        _ => read_rle_json(path),
    }
}
