//! Perception-provider contract and the observation types produced for each
//! frame.
//!
//! The engine never runs vision models itself. Per-frame outputs of the
//! segmenter, depth, detector and embedder roles arrive either from a
//! recorded JSONL trace ([`trace`]) or from live providers joined per frame
//! ([`live`]). [`synth`] generates deterministic rectangle scenarios for
//! tests and demos.

pub mod live;
pub mod synth;
pub mod trace;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{Bbox, RleMask};

pub use live::{Annotator, JoinedSource, RoleOutput, SegmenterSource};
pub use synth::{synth_scenario, template, ScenarioSpec, ScenarioStream, SynthOutput};
pub use trace::{load_trace, write_trace, TraceReader, TraceWriter};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error in `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("scenario error: {0}")]
    Spec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PerceptionError {
    pub fn schema(line: usize, field: &str, message: impl Into<String>) -> Self {
        PerceptionError::Schema {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Capability roles a perception provider can fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderRole {
    Segmenter,
    Depth,
    Detector,
    Embedder,
}

impl ProviderRole {
    pub const ALL: [ProviderRole; 4] = [
        ProviderRole::Segmenter,
        ProviderRole::Depth,
        ProviderRole::Detector,
        ProviderRole::Embedder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProviderRole::Segmenter => "segmenter",
            ProviderRole::Depth => "depth",
            ProviderRole::Detector => "detector",
            ProviderRole::Embedder => "embedder",
        }
    }
}

impl fmt::Display for ProviderRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProviderRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown provider role `{s}`"))
    }
}

/// The roles registered for a stream. The segmenter is mandatory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderSet {
    roles: BTreeSet<ProviderRole>,
}

impl ProviderSet {
    pub fn new(roles: impl IntoIterator<Item = ProviderRole>) -> Result<Self, PerceptionError> {
        let roles: BTreeSet<_> = roles.into_iter().collect();
        if !roles.contains(&ProviderRole::Segmenter) {
            return Err(PerceptionError::Spec(
                "provider set must include a segmenter".into(),
            ));
        }
        Ok(ProviderSet { roles })
    }

    /// Parses provider names as they appear in a trace header.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, PerceptionError> {
        let roles = names
            .iter()
            .map(|n| n.as_ref().parse::<ProviderRole>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(PerceptionError::Spec)?;
        Self::new(roles)
    }

    pub fn contains(&self, role: ProviderRole) -> bool {
        self.roles.contains(&role)
    }

    pub fn roles(&self) -> impl Iterator<Item = ProviderRole> + '_ {
        self.roles.iter().copied()
    }
}

/// One object reported for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub det_id: u32,
    pub category: String,
    pub score: f64,
    pub bbox: Bbox,
    pub mask: RleMask,
    pub centroid: [f64; 2],
    /// Mean depth over the mask; larger is farther from the camera.
    pub depth_mean: Option<f64>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_index: u64,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

impl FrameObservation {
    pub fn empty(frame_index: u64, width: u32, height: u32) -> Self {
        FrameObservation {
            frame_index,
            width,
            height,
            detections: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
    pub embedding_dim: usize,
    pub frame_count: u64,
    pub providers: Vec<ProviderRole>,
}

impl TraceHeader {
    pub fn provider_set(&self) -> Result<ProviderSet, PerceptionError> {
        ProviderSet::new(self.providers.iter().copied())
    }

    pub fn has(&self, role: ProviderRole) -> bool {
        self.providers.contains(&role)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionTrace {
    pub header: TraceHeader,
    pub frames: Vec<FrameObservation>,
}

/// A stream of per-frame observations consumed strictly in index order.
pub trait ObservationSource {
    fn header(&self) -> &TraceHeader;

    /// Next frame, or `Ok(None)` at end of stream.
    fn next_observation(&mut self) -> Result<Option<FrameObservation>, PerceptionError>;
}

/// In-memory source over an already materialised trace.
pub struct VecSource {
    header: TraceHeader,
    frames: std::vec::IntoIter<FrameObservation>,
}

impl VecSource {
    pub fn new(trace: PerceptionTrace) -> Self {
        VecSource {
            header: trace.header,
            frames: trace.frames.into_iter(),
        }
    }
}

impl ObservationSource for VecSource {
    fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn next_observation(&mut self) -> Result<Option<FrameObservation>, PerceptionError> {
        Ok(self.frames.next())
    }
}
