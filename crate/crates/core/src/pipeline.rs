//! Reasoning results to output masks: union, temporal smoothing, threshold.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::mask::{BinaryMask, MaskError, SoftMask};
use crate::twin::SceneGraph;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("track id {0} is not present in the current frame")]
    UnknownTrackId(u64),
    #[error("smoothing buffer is {expected_w}x{expected_h} but the mask is {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("invalid smoothing parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Union of the masks of the selected nodes.
pub fn generate_mask(ids: &BTreeSet<u64>, g: &SceneGraph) -> Result<BinaryMask, PipelineError> {
    let mut out = BinaryMask::new(g.width, g.height)?;
    for id in ids {
        let node = g.nodes.get(id).ok_or(PipelineError::UnknownTrackId(*id))?;
        let m = node.mask.decode()?;
        if m.dims() != out.dims() {
            return Err(MaskError::DimensionMismatch {
                left_w: out.width(),
                left_h: out.height(),
                right_w: m.width(),
                right_h: m.height(),
            }
            .into());
        }
        for (o, &b) in out.bits_mut().iter_mut().zip(m.bits()) {
            *o |= b;
        }
    }
    Ok(out)
}

/// Per-pixel exponential smoothing over the whole frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    alpha: f64,
    threshold: f64,
    prev: Option<SoftMask>,
}

impl SmootherState {
    pub fn new(alpha: f64, threshold: f64) -> Result<Self, PipelineError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(PipelineError::Parameter(format!("alpha must be in (0, 1], got {alpha}")));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(PipelineError::Parameter(format!(
                "threshold must be in (0, 1), got {threshold}"
            )));
        }
        Ok(SmootherState {
            alpha,
            threshold,
            prev: None,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn previous(&self) -> Option<&SoftMask> {
        self.prev.as_ref()
    }

    /// `M̂_t = α·M_t + (1−α)·M̂_{t−1}`, with `M̂_0 = M_0`.
    pub fn smooth(&mut self, m: &BinaryMask) -> Result<SoftMask, PipelineError> {
        let next = match self.prev.take() {
            None => SoftMask::from_binary(m),
            Some(mut prev) => {
                if prev.dims() != m.dims() {
                    let (expected_w, expected_h) = prev.dims();
                    self.prev = Some(prev);
                    return Err(PipelineError::DimensionMismatch {
                        expected_w,
                        expected_h,
                        got_w: m.width(),
                        got_h: m.height(),
                    });
                }
                let a = self.alpha;
                for (v, &b) in prev.values_mut().iter_mut().zip(m.bits()) {
                    let x = if b { 1.0 } else { 0.0 };
                    *v = (a * x + (1.0 - a) * *v).clamp(0.0, 1.0);
                }
                prev
            }
        };
        self.prev = Some(next.clone());
        Ok(next)
    }

    /// Smooths then thresholds.
    pub fn step(&mut self, m: &BinaryMask) -> Result<BinaryMask, PipelineError> {
        let soft = self.smooth(m)?;
        Ok(binarize(&soft, self.threshold))
    }
}

/// Foreground iff value ≥ `threshold`.
pub fn binarize(m: &SoftMask, threshold: f64) -> BinaryMask {
    let bits = m.values().iter().map(|&v| v >= threshold).collect();
    BinaryMask::from_bits(m.width(), m.height(), bits).expect("dimensions come from a valid mask")
}
