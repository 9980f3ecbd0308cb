//! Seeded synthetic scenarios: axis-aligned rectangles moving linearly,
//! with ground truth computed from the true kinematics.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    Detection, FrameObservation, ObservationSource, PerceptionError, PerceptionTrace, ProviderRole, TraceHeader,
};
use crate::evaluation::{Category, Manifest, Sample};
use crate::mask::{bbox_intersects, write_rle_json, BinaryMask};
use crate::planner::{rule_plan, ExecutionPlan};

fn default_dim() -> usize {
    32
}

fn yes() -> bool {
    true
}

fn default_depth() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub category: String,
    /// Centroid at frame 0, in pixels.
    pub start: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Rectangle width and height.
    pub size: [u32; 2],
    #[serde(default = "default_depth")]
    pub depth: f64,
    #[serde(default)]
    pub depth_velocity: f64,
    /// First frame the object is in view.
    #[serde(default)]
    pub appear: u64,
    /// First frame the object is gone again.
    #[serde(default)]
    pub disappear: Option<u64>,
    /// Frames where the segmenter misses the object.
    #[serde(default)]
    pub dropout: Vec<u64>,
}

impl ObjectSpec {
    fn present(&self, t: u64) -> bool {
        t >= self.appear && self.disappear.is_none_or(|d| t < d)
    }

    fn centroid(&self, t: u64) -> [f64; 2] {
        [
            self.start[0] + self.velocity[0] * t as f64,
            self.start[1] + self.velocity[1] * t as f64,
        ]
    }

    fn depth_at(&self, t: u64) -> f64 {
        self.depth + self.depth_velocity * t as f64
    }

    /// Rectangle as signed pixel bounds `[x0, y0, x1, y1)`.
    fn rect(&self, t: u64) -> [i64; 4] {
        let [cx, cy] = self.centroid(t);
        let x0 = (cx - self.size[0] as f64 / 2.0 + 0.5).floor() as i64;
        let y0 = (cy - self.size[1] as f64 / 2.0 + 0.5).floor() as i64;
        [x0, y0, x0 + self.size[0] as i64, y0 + self.size[1] as i64]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    /// Every object of this category.
    Category { category: String },
    /// Objects behind some object of `reference`.
    Behind { reference: String },
    /// Objects that moved since an object of category `event` entered.
    MovedAfterEntered { event: String },
    /// Objects that moved within the window.
    Moved,
}

impl TargetSpec {
    fn default_query(&self) -> String {
        match self {
            TargetSpec::Category { category } => format!("segment the {category}"),
            TargetSpec::Behind { reference } => format!("segment whatever is behind the {reference}"),
            TargetSpec::MovedAfterEntered { event } => {
                format!("segment the objects that moved after the {event} entered")
            }
            TargetSpec::Moved => "segment the objects that moved".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub frames: u64,
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Standard deviation of per-frame embedding noise before renormalising.
    #[serde(default)]
    pub embedding_noise: f64,
    #[serde(default = "yes")]
    pub with_depth: bool,
    #[serde(default)]
    pub query: Option<String>,
    pub category: Category,
    pub level: u8,
    pub objects: Vec<ObjectSpec>,
    pub target: TargetSpec,
}

impl ScenarioSpec {
    pub fn query(&self) -> String {
        self.query.clone().unwrap_or_else(|| self.target.default_query())
    }

    pub fn header(&self) -> TraceHeader {
        let mut providers = vec![ProviderRole::Segmenter, ProviderRole::Embedder];
        if self.with_depth {
            providers.push(ProviderRole::Depth);
        }
        TraceHeader {
            width: self.width,
            height: self.height,
            embedding_dim: self.embedding_dim,
            frame_count: self.frames,
            providers,
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let err = |m: String| Err(PerceptionError::Spec(format!("{}: {m}", self.id)));
        if self.width == 0 || self.height == 0 {
            return err("frame dimensions must be positive".into());
        }
        if self.objects.len() > self.embedding_dim {
            return err(format!(
                "{} objects need distinct embeddings but embedding_dim is {}",
                self.objects.len(),
                self.embedding_dim
            ));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(&o.id) {
                return err(format!("duplicate object id `{}`", o.id));
            }
            if o.size[0] == 0 || o.size[1] == 0 {
                return err(format!("object `{}` has an empty size", o.id));
            }
            for t in (0..self.frames).filter(|&t| o.present(t)) {
                let [x0, y0, x1, y1] = o.rect(t);
                if x0 < 0 || y0 < 0 || x1 > self.width as i64 || y1 > self.height as i64 {
                    return err(format!("object `{}` leaves the frame at frame {t}", o.id));
                }
                if o.depth_at(t) < 0.0 {
                    return err(format!("object `{}` has negative depth at frame {t}", o.id));
                }
            }
        }
        match &self.target {
            TargetSpec::Behind { reference } => {
                if !self.with_depth {
                    return err("a behind target needs depth".into());
                }
                if !self.objects.iter().any(|o| &o.category == reference) {
                    return err(format!("no object of reference category `{reference}`"));
                }
            }
            TargetSpec::MovedAfterEntered { event } => {
                if !self.objects.iter().any(|o| &o.category == event) {
                    return err(format!("no object of event category `{event}`"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Orthonormal unit vectors, one per object.
fn basis(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &out {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

fn frame_rng(seed: u64, t: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ t.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Visible pixels of each present object after occlusion, painted far to
/// near. `None` for objects not in view.
pub fn visible_masks(spec: &ScenarioSpec, t: u64) -> Vec<Option<BinaryMask>> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let mut order: Vec<usize> = (0..spec.objects.len()).filter(|&i| spec.objects[i].present(t)).collect();
    // far first; ties keep spec order, later objects on top
    order.sort_by(|&a, &b| spec.objects[b].depth_at(t).total_cmp(&spec.objects[a].depth_at(t)));
    for &i in &order {
        let [x0, y0, x1, y1] = spec.objects[i].rect(t);
        for y in y0.max(0)..y1.min(h as i64) {
            for x in x0.max(0)..x1.min(w as i64) {
                owner[y as usize * w + x as usize] = Some(i);
            }
        }
    }
    (0..spec.objects.len())
        .map(|i| {
            spec.objects[i].present(t).then(|| {
                let bits = owner.iter().map(|o| *o == Some(i)).collect();
                BinaryMask::from_bits(spec.width, spec.height, bits).expect("frame dimensions are valid")
            })
        })
        .collect()
}

fn render(spec: &ScenarioSpec, bases: &[Vec<f64>], t: u64) -> FrameObservation {
    let visible = visible_masks(spec, t);
    let mut rng = frame_rng(spec.seed, t);
    let mut detections = Vec::new();
    for (i, o) in spec.objects.iter().enumerate() {
        // draw noise for every object so one dropout does not shift the others
        let noise: Vec<f64> = (0..spec.embedding_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * spec.embedding_noise)
            .collect();
        let Some(mask) = &visible[i] else { continue };
        let Some(bbox) = mask.tight_bbox() else { continue };
        if o.dropout.contains(&t) {
            continue;
        }
        let [cx, cy] = o.centroid(t);
        let centroid = [
            cx.clamp(bbox.x as f64, bbox.right() as f64),
            cy.clamp(bbox.y as f64, bbox.bottom() as f64),
        ];
        let mut embedding: Vec<f64> = bases[i].iter().zip(&noise).map(|(b, n)| b + n).collect();
        let norm = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            embedding.iter_mut().for_each(|x| *x /= norm);
        }
        detections.push(Detection {
            det_id: detections.len() as u32,
            category: o.category.clone(),
            score: 1.0,
            bbox,
            mask: mask.to_rle(),
            centroid,
            depth_mean: spec.with_depth.then(|| o.depth_at(t)),
            embedding,
        });
    }
    FrameObservation {
        frame_index: t,
        width: spec.width,
        height: spec.height,
        detections,
    }
}

/// Lazily rendered frames; memory does not grow with the frame count.
pub struct ScenarioStream {
    spec: ScenarioSpec,
    header: TraceHeader,
    bases: Vec<Vec<f64>>,
    next: u64,
}

impl ScenarioStream {
    pub fn new(spec: ScenarioSpec) -> Result<Self, PerceptionError> {
        spec.validate()?;
        Ok(ScenarioStream {
            header: spec.header(),
            bases: basis(spec.objects.len(), spec.embedding_dim, spec.seed),
            spec,
            next: 0,
        })
    }
}

impl ObservationSource for ScenarioStream {
    fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn next_observation(&mut self) -> Result<Option<FrameObservation>, PerceptionError> {
        if self.next >= self.spec.frames {
            return Ok(None);
        }
        let obs = render(&self.spec, &self.bases, self.next);
        self.next += 1;
        Ok(Some(obs))
    }
}

/// Indices of target objects at frame `t`, from true kinematics.
fn target_set(spec: &ScenarioSpec, window: u64, t: u64, visible: &[Option<BinaryMask>]) -> Vec<usize> {
    let moved_since = |o: &ObjectSpec, from: u64| {
        let a = o.centroid(from.max(o.appear));
        let b = o.centroid(t);
        (a[0] - b[0]).hypot(a[1] - b[1]) > crate::dsl::eval::DEFAULT_MOVE_THRESHOLD_PX
    };
    let shown: Vec<usize> = (0..spec.objects.len())
        .filter(|&i| visible[i].as_ref().is_some_and(|m| !m.is_empty()))
        .collect();
    match &spec.target {
        TargetSpec::Category { category } => shown
            .into_iter()
            .filter(|&i| &spec.objects[i].category == category)
            .collect(),
        TargetSpec::Behind { reference } => {
            let bbox = |i: usize| visible[i].as_ref().and_then(BinaryMask::tight_bbox);
            shown
                .iter()
                .copied()
                .filter(|&i| {
                    shown.iter().any(|&j| {
                        j != i
                            && &spec.objects[j].category == reference
                            && spec.objects[i].depth_at(t) > spec.objects[j].depth_at(t)
                            && match (bbox(i), bbox(j)) {
                                (Some(a), Some(b)) => bbox_intersects(&a, &b),
                                _ => false,
                            }
                    })
                })
                .collect()
        }
        TargetSpec::Moved => {
            let from = t.saturating_sub(window);
            shown
                .into_iter()
                .filter(|&i| moved_since(&spec.objects[i], from))
                .collect()
        }
        TargetSpec::MovedAfterEntered { event } => {
            let start = t.saturating_sub(window);
            // the event fires the first frame an event object appears, if
            // that is after the video's first frame and inside the window
            let fired = spec
                .objects
                .iter()
                .filter(|o| &o.category == event && o.present(t) && o.appear > 0)
                .map(|o| o.appear)
                .filter(|&a| a >= start && a <= t)
                .min();
            match fired {
                None => vec![],
                Some(a) => shown
                    .into_iter()
                    .filter(|&i| moved_since(&spec.objects[i], a))
                    .collect(),
            }
        }
    }
}

/// Everything needed to run and score one synthetic sample.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub spec: ScenarioSpec,
    pub trace: PerceptionTrace,
    pub gt: Vec<BinaryMask>,
    pub query: String,
    pub plan: ExecutionPlan,
}

pub fn synth_scenario(spec: &ScenarioSpec) -> Result<SynthOutput, PerceptionError> {
    spec.validate()?;
    let query = spec.query();
    let plan = rule_plan(&query);
    let bases = basis(spec.objects.len(), spec.embedding_dim, spec.seed);
    let mut frames = Vec::with_capacity(spec.frames as usize);
    let mut gt = Vec::with_capacity(spec.frames as usize);
    for t in 0..spec.frames {
        frames.push(render(spec, &bases, t));
        let visible = visible_masks(spec, t);
        let mut m = BinaryMask::new(spec.width, spec.height).expect("frame dimensions are valid");
        for i in target_set(spec, plan.window_size as u64, t, &visible) {
            let v = visible[i].as_ref().expect("targets are visible");
            for (o, &b) in m.bits_mut().iter_mut().zip(v.bits()) {
                *o |= b;
            }
        }
        gt.push(m);
    }
    Ok(SynthOutput {
        spec: spec.clone(),
        trace: PerceptionTrace {
            header: spec.header(),
            frames,
        },
        gt,
        query,
        plan,
    })
}

fn obj(id: &str, category: &str, start: [f64; 2], size: [u32; 2], depth: f64) -> ObjectSpec {
    ObjectSpec {
        id: id.into(),
        category: category.into(),
        start,
        velocity: [0.0, 0.0],
        size,
        depth,
        depth_velocity: 0.0,
        appear: 0,
        disappear: None,
        dropout: vec![],
    }
}

fn scenario(id: &str, frames: u64, category: Category, level: u8, objects: Vec<ObjectSpec>, target: TargetSpec) -> ScenarioSpec {
    ScenarioSpec {
        id: id.into(),
        width: 160,
        height: 120,
        frames,
        seed: 7,
        embedding_dim: 32,
        embedding_noise: 0.0,
        with_depth: true,
        query: None,
        category,
        level,
        objects,
        target,
    }
}

pub const TEMPLATES: [&str; 5] = [
    "semantic_l1",
    "spatial_behind_l2",
    "temporal_moved_after_l2",
    "flicker_moved",
    "flicker_semantic",
];

/// Built-in scenario by name.
pub fn template(name: &str) -> Option<ScenarioSpec> {
    Some(match name {
        "semantic_l1" => scenario(
            name,
            8,
            Category::Semantic,
            1,
            vec![
                ObjectSpec {
                    velocity: [1.0, 0.0],
                    ..obj("cup", "cup", [40.0, 40.0], [16, 16], 2.0)
                },
                obj("table", "table", [100.0, 80.0], [60, 30], 3.0),
                obj("chair", "chair", [130.0, 30.0], [20, 30], 4.0),
            ],
            TargetSpec::Category {
                category: "cup".into(),
            },
        ),
        "spatial_behind_l2" => scenario(
            name,
            8,
            Category::Spatial,
            2,
            vec![
                obj("table", "table", [80.0, 80.0], [60, 30], 3.0),
                ObjectSpec {
                    velocity: [-1.0, 0.0],
                    ..obj("box", "box", [110.0, 60.0], [40, 30], 5.0)
                },
                obj("cup", "cup", [30.0, 40.0], [16, 16], 2.0),
                obj("lamp", "lamp", [30.0, 95.0], [20, 20], 6.0),
            ],
            TargetSpec::Behind {
                reference: "table".into(),
            },
        ),
        "temporal_moved_after_l2" => scenario(
            name,
            10,
            Category::Temporal,
            2,
            vec![
                ObjectSpec {
                    appear: 3,
                    ..obj("ball", "ball", [40.0, 30.0], [12, 12], 2.0)
                },
                ObjectSpec {
                    velocity: [4.0, 0.0],
                    ..obj("car", "car", [20.0, 90.0], [24, 14], 3.0)
                },
                obj("box", "box", [120.0, 40.0], [20, 20], 4.0),
            ],
            TargetSpec::MovedAfterEntered { event: "ball".into() },
        ),
        "flicker_moved" | "flicker_semantic" => {
            let target = if name == "flicker_moved" {
                TargetSpec::Moved
            } else {
                TargetSpec::Category {
                    category: "car".into(),
                }
            };
            let (category, level) = if name == "flicker_moved" {
                (Category::Temporal, 1)
            } else {
                (Category::Semantic, 1)
            };
            scenario(
                name,
                12,
                category,
                level,
                vec![
                    ObjectSpec {
                        velocity: [3.0, 0.0],
                        dropout: vec![6],
                        ..obj("car", "car", [20.0, 80.0], [24, 14], 3.0)
                    },
                    obj("box", "box", [120.0, 30.0], [20, 20], 4.0),
                ],
                target,
            )
        }
        _ => return None,
    })
}

const RANDOM_CATEGORIES: [&str; 8] = ["cup", "car", "ball", "box", "lamp", "chair", "dog", "book"];

/// Seeded scenario with `n` objects (2..=5) in separate horizontal lanes,
/// each moving at most 8 px per frame on a 320x240 frame.
pub fn random_linear(seed: u64, n: usize, frames: u64) -> ScenarioSpec {
    let n = n.clamp(2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (width, height) = (320u32, 240u32);
    let objects = (0..n)
        .map(|i| {
            let w: u32 = rng.random_range(16..=30);
            let h: u32 = rng.random_range(12..=24);
            let vx: f64 = rng.random_range(-8.0..=8.0);
            let vy: f64 = rng.random_range(-0.5..=0.5);
            let travel = frames.saturating_sub(1) as f64;
            // keep the rectangle inside the frame for the whole run
            let lo = w as f64 / 2.0 + 1.0 + (-vx * travel).max(0.0);
            let hi = width as f64 - w as f64 / 2.0 - 1.0 - (vx * travel).max(0.0);
            let (lo, hi, vx) = if lo < hi { (lo, hi, vx) } else { (w as f64, width as f64 - w as f64, 0.0) };
            let lane_y = 24.0 + i as f64 * 46.0;
            let y_drift = (vy * travel).abs();
            let vy = if y_drift < 8.0 { vy } else { 0.0 };
            ObjectSpec {
                velocity: [vx, vy],
                depth: rng.random_range(1.0..10.0),
                ..obj(
                    &format!("o{i}"),
                    RANDOM_CATEGORIES[i],
                    [rng.random_range(lo..=hi), lane_y],
                    [w, h],
                    1.0,
                )
            }
        })
        .collect::<Vec<_>>();
    ScenarioSpec {
        id: format!("random_{seed}"),
        width,
        height,
        frames,
        seed,
        embedding_dim: 32,
        embedding_noise: 0.0,
        with_depth: true,
        query: None,
        category: Category::Semantic,
        level: 1,
        target: TargetSpec::Category {
            category: objects[0].category.clone(),
        },
        objects,
    }
}

/// Writes `<id>.jsonl`, `masks/<id>/fNNNN.json` and `plans/<id>.json` under
/// `dir` and merges the sample into `dir/dataset.json`.
pub fn write_scenario(dir: &Path, out: &SynthOutput) -> Result<Sample, PerceptionError> {
    let id = &out.spec.id;
    let mask_dir = dir.join("masks").join(id);
    std::fs::create_dir_all(&mask_dir)?;
    std::fs::create_dir_all(dir.join("plans"))?;
    super::write_trace(&out.trace, &dir.join(format!("{id}.jsonl")))?;
    for (t, m) in out.gt.iter().enumerate() {
        write_rle_json(m, &mask_dir.join(format!("f{t:04}.json")))
            .map_err(|e| PerceptionError::Spec(e.to_string()))?;
    }
    std::fs::write(dir.join("plans").join(format!("{id}.json")), out.plan.to_json())?;
    let sample = Sample {
        id: id.clone(),
        video: format!("{id}.jsonl"),
        frame_count: out.spec.frames,
        query: out.query.clone(),
        category: out.spec.category,
        level: out.spec.level,
        gt: format!("masks/{id}/"),
    };
    let manifest_path = dir.join("dataset.json");
    let mut manifest: Manifest = if manifest_path.exists() {
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
            .map_err(|e| PerceptionError::Spec(format!("{}: {e}", manifest_path.display())))?
    } else {
        Manifest::default()
    };
    manifest.samples.retain(|s| s.id != sample.id);
    manifest.samples.push(sample.clone());
    manifest.samples.sort_by(|a, b| a.id.cmp(&b.id));
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifests always serialize"),
    )?;
    Ok(sample)
}
