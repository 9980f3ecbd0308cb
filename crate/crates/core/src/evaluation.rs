//! Dataset manifests, the J and F metrics, and per-cell aggregation.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{mask_iou, read_mask_file, BinaryMask, MaskError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence lengths differ: {pred} predicted vs {gt} ground-truth frames")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: MaskError,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("sample `{id}`: {message}")]
    Sample { id: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Semantic,
    Spatial,
    Temporal,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Semantic, Category::Spatial, Category::Temporal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Semantic => "semantic",
            Category::Spatial => "spatial",
            Category::Temporal => "temporal",
        }
    }

    fn title(&self) -> &'static str {
        match self {
            Category::Semantic => "Semantic",
            Category::Spatial => "Spatial",
            Category::Temporal => "Temporal",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const LEVELS: [u8; 3] = [1, 2, 3];

/// One manifest entry. `video` is the trace path and `gt` the directory of
/// per-frame ground-truth masks, both relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub video: String,
    pub frame_count: u64,
    pub query: String,
    pub category: Category,
    pub level: u8,
    pub gt: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<Sample>,
}

impl Manifest {
    pub fn validate(&self) -> Result<(), EvalError> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.samples {
            if !LEVELS.contains(&s.level) {
                return Err(EvalError::Manifest(format!(
                    "sample `{}` has level {}, expected 1, 2 or 3",
                    s.id, s.level
                )));
            }
            if !seen.insert(&s.id) {
                return Err(EvalError::Manifest(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| EvalError::Json {
        path: path.into(),
        source,
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest, EvalError> {
    let m: Manifest = read_json(path)?;
    m.validate()?;
    Ok(m)
}

/// `predictions.json`: sample id to the frame files written for it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionIndex {
    pub samples: BTreeMap<String, PredictionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub query_index: u32,
    pub query: String,
    /// Frame index to file name, relative to the predictions directory.
    pub frames: BTreeMap<u64, String>,
}

pub const PREDICTION_INDEX: &str = "predictions.json";

impl PredictionIndex {
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let p = dir.join(PREDICTION_INDEX);
        if p.exists() {
            read_json(&p)
        } else {
            Ok(PredictionIndex::default())
        }
    }

    /// Existing slot for `id`, or the next unused query index.
    pub fn query_index_for(&self, id: &str) -> u32 {
        self.samples.get(id).map_or_else(
            || self.samples.values().map(|e| e.query_index + 1).max().unwrap_or(0),
            |e| e.query_index,
        )
    }
}

pub fn prediction_file_name(query_index: u32, frame: u64, ext: &str) -> String {
    format!("q{query_index:04}_f{frame:04}.{ext}")
}

/// Mean IoU over frames; a frame where both masks are empty scores 1.
pub fn region_similarity(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<f64, EvalError> {
    per_frame(pred, gt, |p, g| mask_iou(p, g))
}

/// Mean boundary F-measure over frames.
pub fn contour_accuracy(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<f64, EvalError> {
    per_frame(pred, gt, frame_contour_f)
}

fn per_frame(
    pred: &[BinaryMask],
    gt: &[BinaryMask],
    f: impl Fn(&BinaryMask, &BinaryMask) -> Result<f64, MaskError>,
) -> Result<f64, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if gt.is_empty() {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    for (frame, (p, g)) in pred.iter().zip(gt).enumerate() {
        sum += f(p, g).map_err(|source| EvalError::Frame { frame, source })?;
    }
    Ok(sum / gt.len() as f64)
}

/// Boundary tolerance in pixels: `ceil(0.008 · diagonal)`.
pub fn boundary_radius(width: u32, height: u32) -> u32 {
    (0.008 * (width as f64).hypot(height as f64)).ceil() as u32
}

/// Foreground pixels with a 4-neighbour in the background or off-frame.
pub fn boundary(m: &BinaryMask) -> BinaryMask {
    let (w, h) = m.dims();
    let mut out = BinaryMask::new(w, h).expect("dimensions come from a valid mask");
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !m.get(x - 1, y)
                || !m.get(x + 1, y)
                || !m.get(x, y - 1)
                || !m.get(x, y + 1);
            if edge {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Pixels within Euclidean distance `r` of any foreground pixel of `b`.
fn dilate(b: &BinaryMask, r: u32) -> BinaryMask {
    let (w, h) = b.dims();
    let r = r as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = BinaryMask::new(w, h).expect("dimensions come from a valid mask");
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if !b.get(x as u32, y as u32) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                    out.set(nx as u32, ny as u32, true);
                }
            }
        }
    }
    out
}

fn matched_fraction(from: &BinaryMask, reach: &BinaryMask) -> f64 {
    let total = from.area();
    if total == 0 {
        return 1.0;
    }
    let hit = from
        .bits()
        .iter()
        .zip(reach.bits())
        .filter(|(&a, &b)| a && b)
        .count();
    hit as f64 / total as f64
}

/// Boundary F-measure of a single frame.
pub fn frame_contour_f(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MaskError> {
    if pred.dims() != gt.dims() {
        return Err(MaskError::DimensionMismatch {
            left_w: pred.width(),
            left_h: pred.height(),
            right_w: gt.width(),
            right_h: gt.height(),
        });
    }
    let bp = boundary(pred);
    let bg = boundary(gt);
    if bp.is_empty() && bg.is_empty() {
        return Ok(1.0);
    }
    let r = boundary_radius(gt.width(), gt.height());
    let precision = matched_fraction(&bp, &dilate(&bg, r));
    let recall = matched_fraction(&bg, &dilate(&bp, r));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub category: Category,
    pub level: u8,
    pub j: f64,
    pub f: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub category: Category,
    pub level: u8,
    pub j: f64,
    pub f: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
    /// Only populated cells appear.
    pub cells: Vec<CellStats>,
}

impl MetricReport {
    pub fn cell(&self, category: Category, level: u8) -> Option<&CellStats> {
        self.cells
            .iter()
            .find(|c| c.category == category && c.level == level)
    }
}

/// Unweighted mean over samples within each (category, level) cell.
pub fn aggregate(samples: Vec<SampleMetrics>) -> MetricReport {
    let mut sums: BTreeMap<(Category, u8), (f64, f64, usize)> = BTreeMap::new();
    for s in &samples {
        let e = sums.entry((s.category, s.level)).or_default();
        e.0 += s.j;
        e.1 += s.f;
        e.2 += 1;
    }
    let cells = sums
        .into_iter()
        .map(|((category, level), (j, f, count))| CellStats {
            category,
            level,
            j: j / count as f64,
            f: f / count as f64,
            count,
        })
        .collect();
    MetricReport { samples, cells }
}

/// Plain-text table: one row per metric, columns grouped by category then
/// level. Empty cells show `-`.
pub fn render_table(report: &MetricReport) -> String {
    const CELL: usize = 7;
    let group = CELL * LEVELS.len();
    let mut out = String::new();
    let _ = write!(out, "{:<6}", "");
    for c in Category::ALL {
        let _ = write!(out, "|{:^group$}", c.title());
    }
    out.push('\n');
    let _ = write!(out, "{:<6}", "");
    for _ in Category::ALL {
        out.push('|');
        for l in LEVELS {
            let _ = write!(out, "{:^CELL$}", format!("L{l}"));
        }
    }
    out.push('\n');
    for (name, pick) in [("J", 0), ("F", 1)] {
        let _ = write!(out, "{name:<6}");
        for c in Category::ALL {
            out.push('|');
            for l in LEVELS {
                let v = report.cell(c, l).map(|s| if pick == 0 { s.j } else { s.f });
                let text = v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
                let _ = write!(out, "{text:^CELL$}");
            }
        }
        out.push('\n');
    }
    out
}

/// Frame index encoded in a `fNNNN.<ext>` file name.
fn gt_frame_index(name: &str) -> Option<u64> {
    let stem = name.strip_suffix(".json").or_else(|| name.strip_suffix(".png"))?;
    stem.strip_prefix('f')?.parse().ok()
}

/// Annotated frames of a GT directory, ordered by frame index.
pub fn load_gt(dir: &Path) -> Result<Vec<(u64, BinaryMask)>, EvalError> {
    let entries = std::fs::read_dir(dir).map_err(|source| EvalError::Io {
        path: dir.into(),
        source,
    })?;
    let mut frames = Vec::new();
    for e in entries {
        let e = e.map_err(|source| EvalError::Io {
            path: dir.into(),
            source,
        })?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(idx) = gt_frame_index(&name) {
            let m = read_mask_file(&e.path()).map_err(|source| EvalError::Frame {
                frame: idx as usize,
                source,
            })?;
            frames.push((idx, m));
        }
    }
    frames.sort_by_key(|(i, _)| *i);
    if frames.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(EvalError::Manifest(format!(
            "{}: a frame is annotated twice",
            dir.display()
        )));
    }
    Ok(frames)
}

/// Scores one sample. Frames without a prediction count as empty masks.
pub fn evaluate_sample(
    sample: &Sample,
    manifest_dir: &Path,
    predictions_dir: &Path,
    index: &PredictionIndex,
) -> Result<SampleMetrics, EvalError> {
    let sample_err = |message: String| EvalError::Sample {
        id: sample.id.clone(),
        message,
    };
    let gt = load_gt(&manifest_dir.join(&sample.gt))?;
    if gt.is_empty() {
        return Err(sample_err("no annotated frames".into()));
    }
    let entry = index.samples.get(&sample.id);
    if entry.is_none() {
        log::warn!("no predictions for sample `{}`; scoring as empty", sample.id);
    }
    let mut preds = Vec::with_capacity(gt.len());
    let mut gts = Vec::with_capacity(gt.len());
    for (frame, g) in gt {
        if frame >= sample.frame_count {
            return Err(sample_err(format!(
                "ground truth for frame {frame} but the video has {} frames",
                sample.frame_count
            )));
        }
        let p = match entry.and_then(|e| e.frames.get(&frame)) {
            Some(file) => read_mask_file(&predictions_dir.join(file))
                .map_err(|source| EvalError::Frame {
                    frame: frame as usize,
                    source,
                })?,
            None => BinaryMask::new(g.width(), g.height()).expect("dimensions come from a valid mask"),
        };
        preds.push(p);
        gts.push(g);
    }
    Ok(SampleMetrics {
        id: sample.id.clone(),
        category: sample.category,
        level: sample.level,
        j: region_similarity(&preds, &gts)?,
        f: contour_accuracy(&preds, &gts)?,
        frames: gts.len(),
    })
}

/// Scores every sample in the manifest, fanning out across threads.
pub fn evaluate(
    manifest: &Manifest,
    manifest_dir: &Path,
    predictions_dir: &Path,
) -> Result<MetricReport, EvalError> {
    let index = PredictionIndex::load(predictions_dir)?;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(manifest.samples.len().max(1));
    let chunk = manifest.samples.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<SampleMetrics>, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = manifest
            .samples
            .chunks(chunk)
            .map(|part| {
                let index = &index;
                s.spawn(move || {
                    part.iter()
                        .map(|sample| evaluate_sample(sample, manifest_dir, predictions_dir, index))
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut all = Vec::with_capacity(manifest.samples.len());
    for r in results {
        all.extend(r?);
    }
    Ok(aggregate(all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Bbox;
    use proptest::prelude::*;

    fn rect(w: u32, h: u32, b: Bbox) -> BinaryMask {
        BinaryMask::from_bbox(w, h, &b).unwrap()
    }

    fn brute_f(p: &BinaryMask, g: &BinaryMask) -> f64 {
        let pts = |m: &BinaryMask| -> Vec<(f64, f64)> {
            let b = boundary(m);
            let mut v = Vec::new();
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if b.get(x, y) {
                        v.push((x as f64, y as f64));
                    }
                }
            }
            v
        };
        let (bp, bg) = (pts(p), pts(g));
        if bp.is_empty() && bg.is_empty() {
            return 1.0;
        }
        let r = (0.008 * (p.width() as f64).hypot(p.height() as f64)).ceil();
        let frac = |a: &[(f64, f64)], b: &[(f64, f64)]| {
            if a.is_empty() {
                return 1.0;
            }
            let hit = a
                .iter()
                .filter(|(x, y)| b.iter().any(|(u, v)| (x - u).hypot(y - v) <= r))
                .count();
            hit as f64 / a.len() as f64
        };
        let (pr, rc) = (frac(&bp, &bg), frac(&bg, &bp));
        if pr + rc == 0.0 {
            0.0
        } else {
            2.0 * pr * rc / (pr + rc)
        }
    }

    #[test]
    fn j_examples() {
        let a = rect(10, 10, Bbox::new(0, 0, 4, 4));
        let empty = BinaryMask::new(10, 10).unwrap();
        assert_eq!(region_similarity(&[a.clone()], &[a.clone()]).unwrap(), 1.0);
        assert_eq!(region_similarity(&[empty.clone()], &[a.clone()]).unwrap(), 0.0);
        // second frame: |∩| = 8, |∪| = 24
        let b = rect(10, 10, Bbox::new(0, 0, 4, 4));
        let c = rect(10, 10, Bbox::new(0, 2, 4, 4));
        let j = region_similarity(&[a.clone(), b], &[a.clone(), c]).unwrap();
        assert!((j - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(region_similarity(&[empty.clone()], &[empty]).unwrap(), 1.0);
        assert!(matches!(
            region_similarity(&[a.clone()], &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn f_examples() {
        let a = rect(300, 300, Bbox::new(20, 20, 10, 10));
        let empty = BinaryMask::new(300, 300).unwrap();
        assert_eq!(contour_accuracy(&[a.clone()], &[a.clone()]).unwrap(), 1.0);
        assert_eq!(contour_accuracy(&[empty.clone()], &[a.clone()]).unwrap(), 0.0);
        assert_eq!(contour_accuracy(&[empty.clone()], &[empty]).unwrap(), 1.0);
        // 300x300: radius ceil(0.008 * 424.26) = 4
        assert_eq!(boundary_radius(300, 300), 4);
        let shifted = rect(300, 300, Bbox::new(21, 20, 10, 10));
        assert_eq!(contour_accuracy(&[shifted.clone()], &[a.clone()]).unwrap(), 1.0);
        assert_eq!(brute_f(&shifted, &a), 1.0);
    }

    #[test]
    fn boundary_rules() {
        let m = rect(5, 5, Bbox::new(0, 0, 5, 5));
        assert_eq!(boundary(&m).area(), 16);
        let m = rect(7, 7, Bbox::new(1, 1, 5, 5));
        assert_eq!(boundary(&m).area(), 16);
        let m = rect(7, 7, Bbox::new(3, 3, 1, 1));
        assert_eq!(boundary(&m).area(), 1);
    }

    #[test]
    fn aggregate_examples() {
        let s = |id: &str, c, l, j| SampleMetrics {
            id: id.into(),
            category: c,
            level: l,
            j,
            f: j,
            frames: 1,
        };
        let r = aggregate(vec![s("a", Category::Semantic, 1, 0.8)]);
        assert_eq!(r.cell(Category::Semantic, 1).unwrap().j, 0.8);
        assert!(r.cell(Category::Spatial, 1).is_none());

        let r = aggregate(vec![
            s("a", Category::Spatial, 2, 0.6),
            s("b", Category::Spatial, 2, 0.8),
        ]);
        let c = r.cell(Category::Spatial, 2).unwrap();
        assert!((c.j - 0.7).abs() < 1e-12);
        assert_eq!(c.count, 2);
    }

    #[test]
    fn table_layout() {
        let r = aggregate(vec![SampleMetrics {
            id: "a".into(),
            category: Category::Temporal,
            level: 3,
            j: 0.5,
            f: 0.25,
            frames: 1,
        }]);
        let t = render_table(&r);
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        let s = lines[0].find("Semantic").unwrap();
        let p = lines[0].find("Spatial").unwrap();
        let q = lines[0].find("Temporal").unwrap();
        assert!(s < p && p < q);
        assert_eq!(lines[1].matches('L').count(), 9);
        assert_eq!(lines[2].matches('-').count(), 8);
        assert!(lines[2].trim_end().ends_with("0.500"));
        assert!(lines[3].trim_end().ends_with("0.250"));
    }

    #[test]
    fn manifest_validation() {
        let m: Manifest = serde_json::from_str(
            r#"{"samples":[{"id":"a","video":"a.jsonl","frame_count":2,"query":"q","category":"spatial","level":4,"gt":"masks/a/"}]}"#,
        )
        .unwrap();
        assert!(m.validate().is_err());
        assert!(serde_json::from_str::<Manifest>(
            r#"{"samples":[{"id":"a","video":"a","frame_count":2,"query":"q","category":"visual","level":1,"gt":"g"}]}"#
        )
        .is_err());
    }

    #[test]
    fn evaluate_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let gtdir = dir.path().join("masks/a");
        std::fs::create_dir_all(&gtdir).unwrap();
        let m = rect(20, 20, Bbox::new(2, 2, 5, 5));
        crate::mask::write_rle_json(&m, &gtdir.join("f0000.json")).unwrap();
        crate::mask::write_png(&m, &gtdir.join("f0001.png")).unwrap();
        let manifest = Manifest {
            samples: vec![Sample {
                id: "a".into(),
                video: "a.jsonl".into(),
                frame_count: 2,
                query: "q".into(),
                category: Category::Semantic,
                level: 1,
                gt: "masks/a/".into(),
            }],
        };
        let preds = dir.path().join("preds");
        std::fs::create_dir_all(&preds).unwrap();
        let r = evaluate(&manifest, dir.path(), &preds).unwrap();
        assert_eq!(r.samples[0].j, 0.0);
        assert_eq!(r.samples[0].frames, 2);

        let mut index = PredictionIndex::default();
        let mut frames = BTreeMap::new();
        for f in 0..2 {
            let name = prediction_file_name(0, f, "json");
            crate::mask::write_rle_json(&m, &preds.join(&name)).unwrap();
            frames.insert(f, name);
        }
        index.samples.insert(
            "a".into(),
            PredictionEntry {
                query_index: 0,
                query: "q".into(),
                frames,
            },
        );
        std::fs::write(preds.join(PREDICTION_INDEX), serde_json::to_string(&index).unwrap()).unwrap();
        let r = evaluate(&manifest, dir.path(), &preds).unwrap();
        assert_eq!((r.samples[0].j, r.samples[0].f), (1.0, 1.0));
        assert_eq!(index.query_index_for("a"), 0);
        assert_eq!(index.query_index_for("b"), 1);
    }

    fn mask_strategy() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1u32..=32, 1u32..=32).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                prop::collection::vec(prop::bool::weighted(0.3), n),
                prop::collection::vec(prop::bool::weighted(0.3), n),
            )
                .prop_map(move |(a, b)| {
                    (
                        BinaryMask::from_bits(w, h, a).unwrap(),
                        BinaryMask::from_bits(w, h, b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn f_matches_all_pairs_oracle((p, g) in mask_strategy()) {
            let fast = frame_contour_f(&p, &g).unwrap();
            prop_assert!((fast - brute_f(&p, &g)).abs() <= 1e-12);
        }

        #[test]
        fn metrics_symmetric((p, g) in mask_strategy()) {
            prop_assert_eq!(
                region_similarity(&[p.clone()], &[g.clone()]).unwrap(),
                region_similarity(&[g.clone()], &[p.clone()]).unwrap()
            );
            let a = frame_contour_f(&p, &g).unwrap();
            let b = frame_contour_f(&g, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn j_scale_invariant((p, g) in mask_strategy()) {
            prop_assert_eq!(
                region_similarity(&[p.upscale(2)], &[g.upscale(2)]).unwrap(),
                region_similarity(&[p], &[g]).unwrap()
            );
        }
    }
}
