//! Pairwise spatial and motion predicates over object nodes.
//!
//! These are the definitions behind both the relation edges of a scene graph
//! and the spatial forms of the reasoning language. Image coordinates are
//! used throughout: `x` grows rightward, `y` grows downward, and a larger
//! depth is farther from the camera.

use std::fmt;

use crate::mask::bbox_intersects;
use crate::twin::{ObjectNode, RelationLabel};

/// Centroid offsets at or below this many pixels do not flip
/// above/below/left/right.
pub const DEAD_ZONE_PX: f64 = 2.0;

/// `near` holds when centroids are closer than this fraction of the frame
/// diagonal.
pub const NEAR_FRACTION: f64 = 0.25;

/// A predicate needed an attribute the active providers did not supply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingCapability(pub String);

impl fmt::Display for MissingCapability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing capability: {}", self.0)
    }
}

impl std::error::Error for MissingCapability {}

fn depth_of(n: &ObjectNode) -> Result<f64, MissingCapability> {
    n.h_spa
        .depth
        .ok_or_else(|| MissingCapability(format!("depth (track {} has none)", n.track_id)))
}

/// `i` is farther than `j` and their boxes overlap.
pub fn pred_behind(i: &ObjectNode, j: &ObjectNode) -> Result<bool, MissingCapability> {
    Ok(depth_of(i)? > depth_of(j)? && overlaps(i, j))
}

pub fn pred_in_front_of(i: &ObjectNode, j: &ObjectNode) -> Result<bool, MissingCapability> {
    Ok(depth_of(i)? < depth_of(j)? && overlaps(i, j))
}

pub fn overlaps(i: &ObjectNode, j: &ObjectNode) -> bool {
    bbox_intersects(&i.h_spa.bbox, &j.h_spa.bbox)
}

pub fn above(i: &ObjectNode, j: &ObjectNode) -> bool {
    j.h_spa.centroid[1] - i.h_spa.centroid[1] > DEAD_ZONE_PX
}

pub fn below(i: &ObjectNode, j: &ObjectNode) -> bool {
    above(j, i)
}

pub fn left_of(i: &ObjectNode, j: &ObjectNode) -> bool {
    j.h_spa.centroid[0] - i.h_spa.centroid[0] > DEAD_ZONE_PX
}

pub fn right_of(i: &ObjectNode, j: &ObjectNode) -> bool {
    left_of(j, i)
}

pub fn centroid_distance(i: &ObjectNode, j: &ObjectNode) -> f64 {
    let [ax, ay] = i.h_spa.centroid;
    let [bx, by] = j.h_spa.centroid;
    (ax - bx).hypot(ay - by)
}

pub fn near(i: &ObjectNode, j: &ObjectNode, diagonal: f64) -> bool {
    centroid_distance(i, j) < NEAR_FRACTION * diagonal
}

fn approach_rate(i: &ObjectNode, j: &ObjectNode) -> f64 {
    let [vx, vy] = i.h_temp.velocity;
    let [ax, ay] = i.h_spa.centroid;
    let [bx, by] = j.h_spa.centroid;
    vx * (bx - ax) + vy * (by - ay)
}

/// `i`'s velocity points toward `j`'s centroid.
pub fn moving_toward(i: &ObjectNode, j: &ObjectNode) -> bool {
    approach_rate(i, j) > 0.0
}

pub fn moving_away(i: &ObjectNode, j: &ObjectNode) -> bool {
    approach_rate(i, j) < 0.0
}

/// Evaluates the predicate behind a relation label for the ordered pair
/// `(i, j)`.
pub fn relation_holds(
    label: RelationLabel,
    i: &ObjectNode,
    j: &ObjectNode,
    diagonal: f64,
) -> Result<bool, MissingCapability> {
    Ok(match label {
        RelationLabel::Behind => pred_behind(i, j)?,
        RelationLabel::InFrontOf => pred_in_front_of(i, j)?,
        RelationLabel::Above => above(i, j),
        RelationLabel::Below => below(i, j),
        RelationLabel::LeftOf => left_of(i, j),
        RelationLabel::RightOf => right_of(i, j),
        RelationLabel::Near => near(i, j, diagonal),
        RelationLabel::Overlaps => overlaps(i, j),
        RelationLabel::MovingToward => moving_toward(i, j),
        RelationLabel::MovingAway => moving_away(i, j),
    })
}
