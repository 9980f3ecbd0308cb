//! Interpreter for predicate programs over a read-only twin.
//!
//! Expressions are evaluated against a *view*: a contiguous run of window
//! graphs whose last element is the frame being reasoned about. Temporal
//! operators look back through the view; `after`/`before` narrow it.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::{AttrKey, Expr, PredicateProgram, Selector, SpatialPred, TemporalOp};
use super::predicates::{self, centroid_distance, MissingCapability};
use super::semantic::SemanticProvider;
use super::DslError;
use crate::twin::{ObjectNode, SceneGraph, TwinState};

pub type IdSet = BTreeSet<u64>;

/// Default minimum net centroid displacement, in pixels, for `moved`.
pub const DEFAULT_MOVE_THRESHOLD_PX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub move_threshold: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            move_threshold: DEFAULT_MOVE_THRESHOLD_PX,
        }
    }
}

pub struct EvalContext<'a> {
    pub twin: &'a TwinState,
    pub semantic: &'a dyn SemanticProvider,
    /// Outputs of already-evaluated plan nodes, for `(node "...")`.
    pub node_outputs: &'a BTreeMap<String, IdSet>,
    pub params: EvalParams,
}

impl<'a> EvalContext<'a> {
    pub fn new(twin: &'a TwinState, semantic: &'a dyn SemanticProvider) -> Self {
        static EMPTY: BTreeMap<String, IdSet> = BTreeMap::new();
        EvalContext {
            twin,
            semantic,
            node_outputs: &EMPTY,
            params: EvalParams::default(),
        }
    }
}

/// Evaluates `program` at the twin's current frame.
pub fn eval_program(program: &PredicateProgram, ctx: &EvalContext<'_>) -> Result<IdSet, DslError> {
    let view: Vec<&SceneGraph> = ctx.twin.window().iter().collect();
    if view.is_empty() {
        return Ok(IdSet::new());
    }
    Evaluator { ctx }.eval(&program.root, &view)
}

struct Evaluator<'c, 'a> {
    ctx: &'c EvalContext<'a>,
}

fn current<'g>(view: &[&'g SceneGraph]) -> &'g SceneGraph {
    view.last().expect("views are never empty")
}

fn present(view: &[&SceneGraph]) -> IdSet {
    current(view).nodes.keys().copied().collect()
}

impl Evaluator<'_, '_> {
    fn eval(&self, e: &Expr, view: &[&SceneGraph]) -> Result<IdSet, DslError> {
        let g = current(view);
        Ok(match e {
            Expr::All => present(view),
            Expr::Node(id) => self
                .ctx
                .node_outputs
                .get(id)
                .cloned()
                .ok_or_else(|| DslError::UnknownNode(id.clone()))?,
            Expr::Category(c) => g
                .nodes
                .values()
                .filter(|n| n.category.eq_ignore_ascii_case(c))
                .map(|n| n.track_id)
                .collect(),
            Expr::Attr { key, cmp, value } => {
                let mut out = IdSet::new();
                for n in g.nodes.values() {
                    if cmp.holds(attr_value(n, *key)?, *value) {
                        out.insert(n.track_id);
                    }
                }
                out
            }
            Expr::Spatial {
                pred,
                subject,
                target,
            } => {
                let subjects = self.eval(subject, view)?;
                let targets = self.eval(target, view)?;
                let diagonal = g.diagonal();
                let mut out = IdSet::new();
                for i in subjects.iter().filter_map(|id| g.nodes.get(id)) {
                    for j in targets.iter().filter_map(|id| g.nodes.get(id)) {
                        if i.track_id != j.track_id && spatial(*pred, i, j, diagonal)? {
                            out.insert(i.track_id);
                            break;
                        }
                    }
                }
                out
            }
            Expr::And(args) => {
                let mut it = args.iter();
                let mut acc = match it.next() {
                    Some(first) => self.eval(first, view)?,
                    None => present(view),
                };
                for a in it {
                    let s = self.eval(a, view)?;
                    acc.retain(|id| s.contains(id));
                }
                acc
            }
            Expr::Or(args) => {
                let mut acc = IdSet::new();
                for a in args {
                    acc.extend(self.eval(a, view)?);
                }
                acc
            }
            Expr::Not(inner) => {
                let s = self.eval(inner, view)?;
                present(view).difference(&s).copied().collect()
            }
            Expr::Select { selector, args } => self.select(*selector, args, view)?,
            Expr::Semantic(text) => self.ctx.semantic.select(text, g)?,
            Expr::Temporal { op, args, span } => self.temporal(*op, args, *span, view)?,
        })
    }

    fn select(&self, selector: Selector, args: &[Expr], view: &[&SceneGraph]) -> Result<IdSet, DslError> {
        let g = current(view);
        let candidates: Vec<&ObjectNode> = self
            .eval(&args[0], view)?
            .iter()
            .filter_map(|id| g.nodes.get(id))
            .collect();
        // Ties resolve to the lowest track id: candidates are ascending and
        // only a strictly better score replaces the incumbent.
        let best = |score: &dyn Fn(&ObjectNode) -> Option<f64>, maximize: bool| {
            let mut best: Option<(f64, u64)> = None;
            for n in &candidates {
                if let Some(s) = score(n) {
                    let better = match best {
                        None => true,
                        Some((b, _)) => (maximize && s > b) || (!maximize && s < b),
                    };
                    if better {
                        best = Some((s, n.track_id));
                    }
                }
            }
            best.map(|(_, id)| id).into_iter().collect::<IdSet>()
        };
        Ok(match selector {
            Selector::Largest => best(&|n| Some(n.h_spa.area as f64), true),
            Selector::Smallest => best(&|n| Some(n.h_spa.area as f64), false),
            Selector::ClosestTo | Selector::FarthestFrom => {
                let refs: Vec<&ObjectNode> = self
                    .eval(&args[1], view)?
                    .iter()
                    .filter_map(|id| g.nodes.get(id))
                    .collect();
                let dist = |n: &ObjectNode| {
                    refs.iter()
                        .filter(|r| r.track_id != n.track_id)
                        .map(|r| centroid_distance(n, r))
                        .min_by(f64::total_cmp)
                };
                best(&dist, selector == Selector::FarthestFrom)
            }
        })
    }

    fn temporal(
        &self,
        op: TemporalOp,
        args: &[Expr],
        span: Option<u32>,
        view: &[&SceneGraph],
    ) -> Result<IdSet, DslError> {
        let g = current(view);
        match op {
            TemporalOp::Moved => {
                let view = match span {
                    Some(n) => {
                        let window = self.ctx.twin.config().effective_window();
                        if n as usize > window {
                            return Err(MissingCapability(format!(
                                "window of {window} frames is shorter than the requested span of {n}"
                            ))
                            .into());
                        }
                        &view[view.len().saturating_sub(n as usize + 1)..]
                    }
                    None => view,
                };
                let subjects = self.eval(&args[0], view)?;
                Ok(subjects
                    .into_iter()
                    .filter(|id| {
                        let Some(now) = g.nodes.get(id) else {
                            return false;
                        };
                        let Some(then) = view.iter().find_map(|v| v.nodes.get(id)) else {
                            return false;
                        };
                        centroid_distance(now, then) > self.ctx.params.move_threshold
                    })
                    .collect())
            }
            TemporalOp::Entered => {
                let start = view[0].frame_index;
                let origin = self.ctx.twin.origin_frame().unwrap_or(0);
                let subjects = self.eval(&args[0], view)?;
                Ok(subjects
                    .into_iter()
                    .filter(|id| {
                        g.nodes.get(id).is_some_and(|n| {
                            let first = n.h_temp.first_seen();
                            first >= start && first > origin
                        })
                    })
                    .collect())
            }
            TemporalOp::Exited => {
                let mut out = IdSet::new();
                for k in 0..view.len().saturating_sub(1) {
                    let sub = &view[..=k];
                    let gone: Vec<u64> = view[k]
                        .nodes
                        .keys()
                        .copied()
                        .filter(|id| !view[k + 1].nodes.contains_key(id) && !g.nodes.contains_key(id))
                        .collect();
                    if gone.is_empty() {
                        continue;
                    }
                    let s = self.eval(&args[0], sub)?;
                    out.extend(gone.into_iter().filter(|id| s.contains(id)));
                }
                Ok(out)
            }
            TemporalOp::MovingToward => {
                let subjects = self.eval(&args[0], view)?;
                let targets = self.eval(&args[1], view)?;
                Ok(subjects
                    .into_iter()
                    .filter(|id| {
                        g.nodes.get(id).is_some_and(|i| {
                            targets
                                .iter()
                                .filter(|t| *t != id)
                                .filter_map(|t| g.nodes.get(t))
                                .any(|j| predicates::moving_toward(i, j))
                        })
                    })
                    .collect())
            }
            TemporalOp::After | TemporalOp::Before => {
                let Some(k) = self.first_event_frame(&args[0], view)? else {
                    return Ok(IdSet::new());
                };
                if op == TemporalOp::After {
                    return self.eval(&args[1], &view[k..]);
                }
                if k == 0 {
                    return Ok(IdSet::new());
                }
                let earlier = self.eval(&args[1], &view[..k])?;
                Ok(earlier.into_iter().filter(|id| g.nodes.contains_key(id)).collect())
            }
        }
    }

    /// Index into `view` of the first frame whose event set is non-empty.
    fn first_event_frame(&self, event: &Expr, view: &[&SceneGraph]) -> Result<Option<usize>, DslError> {
        for k in 0..view.len() {
            if !self.eval(event, &view[..=k])?.is_empty() {
                return Ok(Some(k));
            }
        }
        Ok(None)
    }
}

fn spatial(pred: SpatialPred, i: &ObjectNode, j: &ObjectNode, diagonal: f64) -> Result<bool, MissingCapability> {
    Ok(match pred {
        SpatialPred::Behind => predicates::pred_behind(i, j)?,
        SpatialPred::InFrontOf => predicates::pred_in_front_of(i, j)?,
        SpatialPred::Above => predicates::above(i, j),
        SpatialPred::Below => predicates::below(i, j),
        SpatialPred::LeftOf => predicates::left_of(i, j),
        SpatialPred::RightOf => predicates::right_of(i, j),
        SpatialPred::Near => predicates::near(i, j, diagonal),
        SpatialPred::Overlaps => predicates::overlaps(i, j),
    })
}

fn attr_value(n: &ObjectNode, key: AttrKey) -> Result<f64, MissingCapability> {
    let [x, y] = n.h_spa.centroid;
    let [vx, vy] = n.h_temp.velocity;
    Ok(match key {
        AttrKey::Area => n.h_spa.area as f64,
        AttrKey::Depth => n
            .h_spa
            .depth
            .ok_or_else(|| MissingCapability(format!("depth (track {} has none)", n.track_id)))?,
        AttrKey::X => x,
        AttrKey::Y => y,
        AttrKey::Vx => vx,
        AttrKey::Vy => vy,
        AttrKey::Speed => vx.hypot(vy),
        AttrKey::Age => n.h_temp.age as f64,
    })
}
