use std::fmt::Write;

use crate::twin::SceneGraph;

/// Integral values print without a fractional part, others with at most
/// two decimals.
fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders a scene as text for a language model: a header line, one line
/// per object, then one line per relation, all ordered by id.
pub fn format_scene(g: &SceneGraph) -> String {
    let mut out = format!(
        "Scene at frame {} ({}x{}), {} objects:\n",
        g.frame_index,
        g.width,
        g.height,
        g.nodes.len()
    );
    for n in g.nodes.values() {
        let [x, y] = n.h_spa.centroid;
        let [vx, vy] = n.h_temp.velocity;
        let depth = n.h_spa.depth.map_or_else(|| "unknown".to_string(), num);
        let _ = writeln!(
            out,
            "object {}: {} at ({}, {}), depth {}, velocity ({}, {})",
            n.track_id,
            n.category,
            num(x),
            num(y),
            depth,
            num(vx),
            num(vy)
        );
    }
    for e in &g.edges {
        let _ = writeln!(
            out,
            "object {} is {} object {}",
            e.src,
            e.label.as_str().replace('_', " "),
            e.dst
        );
    }
    out
}
