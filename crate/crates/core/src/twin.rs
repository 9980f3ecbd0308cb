//! The digital twin: per-frame scene graphs, cross-frame identity and the
//! sliding window of recent graphs.
//!
//! Every node carries three attribute groups: visual features (`h_vis`),
//! spatial properties (`h_spa`) and temporal state (`h_temp`). Edges are
//! derived purely from the attributes of their two endpoints.
//!
//! Identity is carried across frames by greedy assignment on
//! [`corr`]: `logistic(cos(h_vis) + λ · exp(-‖Δcentroid‖ / diagonal))`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::predicates::{relation_holds, MissingCapability};
use crate::mask::{Bbox, MaskError, RleMask};
use crate::perception::FrameObservation;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    MissingCapability(#[from] MissingCapability),
    #[error("non-contiguous frame: expected {expected}, got {got}")]
    NonContiguousFrame { expected: u64, got: u64 },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialAttrs {
    pub centroid: [f64; 2],
    pub bbox: Bbox,
    pub depth: Option<f64>,
    /// Foreground pixel count of the object's mask.
    pub area: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalAttrs {
    /// Last-step centroid delta in px/frame; zero until the track is two
    /// frames old.
    pub velocity: [f64; 2],
    /// Consecutive frames this track has been observed, including this one.
    pub age: u32,
    pub last_seen: u64,
    /// `(frame, centroid)` pairs for this track, limited to the window.
    pub history: Vec<(u64, [f64; 2])>,
}

impl TemporalAttrs {
    pub fn first_seen(&self) -> u64 {
        self.last_seen + 1 - self.age as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub track_id: u64,
    pub det_id: u32,
    pub category: String,
    pub h_vis: Vec<f64>,
    pub h_spa: SpatialAttrs,
    pub h_temp: TemporalAttrs,
    pub mask: RleMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationLabel {
    Behind,
    InFrontOf,
    Above,
    Below,
    LeftOf,
    RightOf,
    Near,
    Overlaps,
    MovingToward,
    MovingAway,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 10] = [
        RelationLabel::Behind,
        RelationLabel::InFrontOf,
        RelationLabel::Above,
        RelationLabel::Below,
        RelationLabel::LeftOf,
        RelationLabel::RightOf,
        RelationLabel::Near,
        RelationLabel::Overlaps,
        RelationLabel::MovingToward,
        RelationLabel::MovingAway,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelationLabel::Behind => "behind",
            RelationLabel::InFrontOf => "in_front_of",
            RelationLabel::Above => "above",
            RelationLabel::Below => "below",
            RelationLabel::LeftOf => "left_of",
            RelationLabel::RightOf => "right_of",
            RelationLabel::Near => "near",
            RelationLabel::Overlaps => "overlaps",
            RelationLabel::MovingToward => "moving_toward",
            RelationLabel::MovingAway => "moving_away",
        }
    }

    pub fn needs_depth(&self) -> bool {
        matches!(self, RelationLabel::Behind | RelationLabel::InFrontOf)
    }

    /// Labels computable without a depth provider.
    pub fn without_depth() -> Vec<RelationLabel> {
        Self::ALL.into_iter().filter(|l| !l.needs_depth()).collect()
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub src: u64,
    pub dst: u64,
    pub label: RelationLabel,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub frame_index: u64,
    pub width: u32,
    pub height: u32,
    pub nodes: BTreeMap<u64, ObjectNode>,
    pub edges: Vec<RelationEdge>,
}

impl SceneGraph {
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn has_edge(&self, src: u64, dst: u64, label: RelationLabel) -> bool {
        self.edges
            .iter()
            .any(|e| e.src == src && e.dst == dst && e.label == label)
    }
}

/// Builds the provisional graph for one frame: one node per detection,
/// keyed by `det_id`, with zeroed temporal state.
pub fn build_frame_graph(obs: &FrameObservation) -> SceneGraph {
    let nodes = obs
        .detections
        .iter()
        .map(|d| {
            let node = ObjectNode {
                track_id: d.det_id as u64,
                det_id: d.det_id,
                category: d.category.clone(),
                h_vis: d.embedding.clone(),
                h_spa: SpatialAttrs {
                    centroid: d.centroid,
                    bbox: d.bbox,
                    depth: d.depth_mean,
                    area: d.mask.area(),
                },
                h_temp: TemporalAttrs {
                    velocity: [0.0, 0.0],
                    age: 1,
                    last_seen: obs.frame_index,
                    history: vec![(obs.frame_index, d.centroid)],
                },
                mask: d.mask.clone(),
            };
            (d.det_id as u64, node)
        })
        .collect();
    SceneGraph {
        frame_index: obs.frame_index,
        width: obs.width,
        height: obs.height,
        nodes,
        edges: Vec::new(),
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, TwinError> {
    if a.len() != b.len() {
        return Err(TwinError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Spatial proximity in `(0, 1]`: `exp(-‖c_a − c_b‖ / diagonal)`.
pub fn spatial_proximity(a: &SpatialAttrs, b: &SpatialAttrs, diagonal: f64) -> f64 {
    let d = (a.centroid[0] - b.centroid[0]).hypot(a.centroid[1] - b.centroid[1]);
    (-d / diagonal).exp()
}

/// Correspondence score between a node from the previous frame and one
/// from the current frame.
pub fn corr(a: &ObjectNode, b: &ObjectNode, lambda: f64, diagonal: f64) -> Result<f64, TwinError> {
    let sim = cosine_similarity(&a.h_vis, &b.h_vis)?;
    Ok(logistic(
        sim + lambda * spatial_proximity(&a.h_spa, &b.h_spa, diagonal),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingParams {
    pub lambda: f64,
    pub tau_match: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams {
            lambda: 0.5,
            tau_match: 0.6,
        }
    }
}

/// Result of associating a provisional graph with the previous frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(det_id, previous track_id, corr)`.
    pub matched: Vec<(u32, u64, f64)>,
    /// Current detections left without a predecessor, in `det_id` order.
    pub fresh: Vec<u32>,
    /// Previous tracks with no successor, ascending.
    pub dropped: Vec<u64>,
}

/// Greedy one-to-one assignment by descending `corr`. Ties go to the lower
/// previous track id, then the lower det id. Pairs scoring below
/// `tau_match` are never matched.
pub fn match_objects(
    prev: &SceneGraph,
    curr: &SceneGraph,
    params: &TrackingParams,
) -> Result<Assignment, TwinError> {
    let diagonal = curr.diagonal();
    let mut candidates = Vec::with_capacity(prev.nodes.len() * curr.nodes.len());
    for p in prev.nodes.values() {
        for c in curr.nodes.values() {
            let score = corr(p, c, params.lambda, diagonal)?;
            if score >= params.tau_match {
                candidates.push((score, p.track_id, c.det_id));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_prev = std::collections::BTreeSet::new();
    let mut used_curr = std::collections::BTreeSet::new();
    let mut matched = Vec::new();
    for (score, track, det) in candidates {
        if used_prev.contains(&track) || used_curr.contains(&det) {
            continue;
        }
        used_prev.insert(track);
        used_curr.insert(det);
        matched.push((det, track, score));
    }
    matched.sort_by_key(|m| m.0);
    Ok(Assignment {
        matched,
        fresh: curr
            .nodes
            .values()
            .map(|n| n.det_id)
            .filter(|d| !used_curr.contains(d))
            .collect(),
        dropped: prev
            .nodes
            .keys()
            .copied()
            .filter(|t| !used_prev.contains(t))
            .collect(),
    })
}

/// Emits every requested relation edge that holds between ordered node
/// pairs. Edges come out sorted by `(src, dst, label)`.
pub fn compute_relations(g: &mut SceneGraph, labels: &[RelationLabel]) -> Result<(), TwinError> {
    let diagonal = g.diagonal();
    let mut edges = Vec::new();
    for a in g.nodes.values() {
        for b in g.nodes.values() {
            if a.track_id == b.track_id {
                continue;
            }
            for &label in labels {
                if relation_holds(label, a, b, diagonal)? {
                    edges.push(RelationEdge {
                        src: a.track_id,
                        dst: b.track_id,
                        label,
                        strength: 1.0,
                    });
                }
            }
        }
    }
    edges.sort_by(|x, y| (x.src, x.dst, x.label).cmp(&(y.src, y.dst, y.label)));
    edges.dedup_by(|x, y| (x.src, x.dst, x.label) == (y.src, y.dst, y.label));
    g.edges = edges;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinConfig {
    /// Window size `w`: graphs for frames `t-w ..= t` are retained.
    pub window: usize,
    pub tracking: TrackingParams,
    /// Cross-frame identity; when off every detection gets a fresh id.
    pub dt_update: bool,
    /// Temporal integration; when off the window collapses to one frame.
    pub temporal_integration: bool,
    pub relations: Vec<RelationLabel>,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            window: 6,
            tracking: TrackingParams::default(),
            dt_update: true,
            temporal_integration: true,
            relations: RelationLabel::without_depth(),
        }
    }
}

impl TwinConfig {
    pub fn effective_window(&self) -> usize {
        if self.temporal_integration {
            self.window
        } else {
            0
        }
    }
}

/// Windowed twin state for one video stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinState {
    config: TwinConfig,
    window: VecDeque<SceneGraph>,
    next_track_id: u64,
    origin_frame: Option<u64>,
}

impl TwinState {
    pub fn new(config: TwinConfig) -> Self {
        TwinState {
            config,
            window: VecDeque::new(),
            next_track_id: 0,
            origin_frame: None,
        }
    }

    pub fn config(&self) -> &TwinConfig {
        &self.config
    }

    /// Retained graphs, oldest first.
    pub fn window(&self) -> &VecDeque<SceneGraph> {
        &self.window
    }

    pub fn current(&self) -> Option<&SceneGraph> {
        self.window.back()
    }

    /// First frame index this stream processed.
    pub fn origin_frame(&self) -> Option<u64> {
        self.origin_frame
    }

    pub fn next_track_id(&self) -> u64 {
        self.next_track_id
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_track_id;
        self.next_track_id += 1;
        id
    }

    /// Ingests the next frame: build, associate, relate, append, evict.
    pub fn update(&mut self, obs: &FrameObservation) -> Result<&SceneGraph, TwinError> {
        let expected = self.current().map_or(0, |g| g.frame_index + 1);
        if obs.frame_index != expected {
            return Err(TwinError::NonContiguousFrame {
                expected,
                got: obs.frame_index,
            });
        }
        let t = obs.frame_index;
        let w = self.config.effective_window() as u64;
        let provisional = build_frame_graph(obs);

        let assignment = match self.window.back() {
            Some(prev) if self.config.dt_update => {
                match_objects(prev, &provisional, &self.config.tracking)?
            }
            _ => Assignment {
                fresh: provisional.nodes.values().map(|n| n.det_id).collect(),
                ..Assignment::default()
            },
        };

        let mut nodes = BTreeMap::new();
        for &(det, track, _) in &assignment.matched {
            let prev = &self.window.back().expect("matched implies a previous graph").nodes[&track];
            let mut node = provisional.nodes[&(det as u64)].clone();
            let [px, py] = prev.h_spa.centroid;
            let [cx, cy] = node.h_spa.centroid;
            node.track_id = track;
            node.h_temp.velocity = [cx - px, cy - py];
            node.h_temp.age = prev.h_temp.age + 1;
            node.h_temp.history = prev
                .h_temp
                .history
                .iter()
                .copied()
                .filter(|(f, _)| f + w >= t)
                .chain(std::iter::once((t, [cx, cy])))
                .collect();
            nodes.insert(track, node);
        }
        for &det in &assignment.fresh {
            let mut node = provisional.nodes[&(det as u64)].clone();
            node.track_id = self.fresh_id();
            nodes.insert(node.track_id, node);
        }

        let mut graph = SceneGraph {
            nodes,
            edges: Vec::new(),
            ..provisional
        };
        compute_relations(&mut graph, &self.config.relations)?;

        self.origin_frame.get_or_insert(t);
        self.window.push_back(graph);
        while self
            .window
            .front()
            .is_some_and(|g| g.frame_index + w < t)
        {
            self.window.pop_front();
        }
        Ok(self.window.back().expect("just pushed"))
    }
}

/// Compact per-frame dump used for debugging and golden tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinSnapshot {
    pub frame_index: u64,
    pub nodes: Vec<SnapshotNode>,
    pub edges: Vec<SnapshotEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub track_id: u64,
    pub category: String,
    pub centroid: [f64; 2],
    pub z: Option<f64>,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEdge {
    pub src: u64,
    pub dst: u64,
    pub label: RelationLabel,
}

impl From<&SceneGraph> for TwinSnapshot {
    fn from(g: &SceneGraph) -> Self {
        TwinSnapshot {
            frame_index: g.frame_index,
            nodes: g
                .nodes
                .values()
                .map(|n| SnapshotNode {
                    track_id: n.track_id,
                    category: n.category.clone(),
                    centroid: n.h_spa.centroid,
                    z: n.h_spa.depth,
                    velocity: n.h_temp.velocity,
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| SnapshotEdge {
                    src: e.src,
                    dst: e.dst,
                    label: e.label,
                })
                .collect(),
        }
    }
}
