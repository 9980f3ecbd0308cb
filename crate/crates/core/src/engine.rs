//! Streaming execution of a plan: observation in, smoothed mask out.
//!
//! Per frame the engine updates the twin, evaluates reasoning nodes in
//! dependency order, unions the output node's objects into a mask and
//! smooths it. Only the twin window and one soft mask are carried between
//! frames.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};
use crate::dsl::{eval_program, DslError, EvalContext, EvalParams, IdSet, PredicateProgram, SemanticProvider};
use crate::evaluation::{prediction_file_name, PredictionEntry, PredictionIndex, PREDICTION_INDEX};
use crate::mask::{write_png, write_rle_json, BinaryMask, MaskError};
use crate::perception::{FrameObservation, ObservationSource, PerceptionError, ProviderRole, TraceHeader};
use crate::pipeline::{generate_mask, PipelineError, SmootherState};
use crate::planner::{topo_order, validate_plan, without_model_selection, ExecutionPlan, NodeKind, PlanInvalid};
use crate::twin::{RelationLabel, TwinConfig, TwinError, TwinSnapshot, TwinState};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Plan(#[from] PlanInvalid),
    #[error("the plan needs the {role} provider but the trace does not carry it")]
    MissingProvider { role: ProviderRole },
    #[error("bad parameter `{param}` on node {node}: {message}")]
    Param {
        node: String,
        param: String,
        message: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error("node {node}: {source}")]
    Node { node: String, source: DslError },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl EngineError {
    fn output(path: &Path, e: impl ToString) -> Self {
        EngineError::Output {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Window size and tracking parameters from the config, keeping any longer
/// window the planner asked for.
pub fn apply_config(mut plan: ExecutionPlan, cfg: &EngineConfig) -> ExecutionPlan {
    plan.window_size = plan.window_size.max(cfg.window);
    plan.tracking = cfg.tracking();
    plan
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_index: u64,
    /// `R_t`: track ids selected by the output node.
    pub selected: IdSet,
    /// Union mask before smoothing.
    pub raw: BinaryMask,
    pub mask: BinaryMask,
}

struct ReasoningStep {
    id: String,
    program: PredicateProgram,
    params: EvalParams,
}

fn node_params(id: &str, params: &BTreeMap<String, serde_json::Value>) -> Result<EvalParams, EngineError> {
    let mut out = EvalParams::default();
    for (k, v) in params {
        let bad = |message: &str| EngineError::Param {
            node: id.into(),
            param: k.clone(),
            message: message.into(),
        };
        match k.as_str() {
            "move_threshold" => {
                out.move_threshold = v
                    .as_f64()
                    .filter(|x| x.is_finite() && *x >= 0.0)
                    .ok_or_else(|| bad("expected a non-negative number"))?;
            }
            _ => return Err(bad("unknown parameter")),
        }
    }
    Ok(out)
}

pub struct Engine {
    plan: ExecutionPlan,
    steps: Vec<ReasoningStep>,
    twin: TwinState,
    smoother: SmootherState,
    semantic: Box<dyn SemanticProvider>,
    keep_depth: bool,
}

impl Engine {
    /// Validates `plan` against the config and the trace's providers.
    pub fn new(
        plan: ExecutionPlan,
        cfg: &EngineConfig,
        header: &TraceHeader,
        semantic: Box<dyn SemanticProvider>,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        let plan = if cfg.model_selection {
            plan
        } else {
            without_model_selection(plan)
        };
        validate_plan(&plan)?;
        for role in plan.required_roles() {
            if !header.has(role) {
                return Err(EngineError::MissingProvider { role });
            }
        }
        for role in plan.roles() {
            if !header.has(role) {
                log::warn!("plan selects the {role} provider, which the trace does not carry");
            }
        }
        let keep_depth = plan.roles().contains(&ProviderRole::Depth) && header.has(ProviderRole::Depth);

        let programs = plan.parsed_programs()?;
        let mut steps = Vec::new();
        for id in topo_order(&plan) {
            let node = plan.node(&id).expect("topological order lists plan nodes");
            if node.kind != NodeKind::Reasoning {
                continue;
            }
            steps.push(ReasoningStep {
                params: node_params(&id, &node.params)?,
                program: programs[&id].clone(),
                id,
            });
        }

        let twin = TwinState::new(TwinConfig {
            window: plan.window_size,
            tracking: plan.tracking,
            dt_update: cfg.dt_update,
            temporal_integration: cfg.temporal_integration,
            relations: if keep_depth {
                RelationLabel::ALL.to_vec()
            } else {
                RelationLabel::without_depth()
            },
        });
        let smoother = SmootherState::new(cfg.effective_alpha(), cfg.threshold)?;
        Ok(Engine {
            plan,
            steps,
            twin,
            smoother,
            semantic,
            keep_depth,
        })
    }

    pub fn plan(&self) -> &ExecutionPlan {
        &self.plan
    }

    pub fn twin(&self) -> &TwinState {
        &self.twin
    }

    pub fn smoother(&self) -> &SmootherState {
        &self.smoother
    }

    pub fn step(&mut self, obs: &FrameObservation) -> Result<FrameOutput, EngineError> {
        // the twin only holds what the plan selected
        let obs = if self.keep_depth || obs.detections.iter().all(|d| d.depth_mean.is_none()) {
            Cow::Borrowed(obs)
        } else {
            let mut o = obs.clone();
            o.detections.iter_mut().for_each(|d| d.depth_mean = None);
            Cow::Owned(o)
        };
        self.twin.update(&obs)?;

        let mut outputs: BTreeMap<String, IdSet> = BTreeMap::new();
        for s in &self.steps {
            let ctx = EvalContext {
                twin: &self.twin,
                semantic: self.semantic.as_ref(),
                node_outputs: &outputs,
                params: s.params,
            };
            let ids = eval_program(&s.program, &ctx).map_err(|source| EngineError::Node {
                node: s.id.clone(),
                source,
            })?;
            outputs.insert(s.id.clone(), ids);
        }

        let g = self.twin.current().expect("updated above");
        let selected: IdSet = outputs
            .remove(&self.plan.output_node)
            .unwrap_or_default()
            .into_iter()
            .filter(|id| g.nodes.contains_key(id))
            .collect();
        let raw = generate_mask(&selected, g)?;
        let mask = self.smoother.step(&raw)?;
        Ok(FrameOutput {
            frame_index: obs.frame_index,
            selected,
            raw,
            mask,
        })
    }

    /// Drains `source`, handing each frame's output to `sink` as soon as it
    /// is computed. Returns the number of frames processed.
    pub fn run(
        &mut self,
        source: &mut dyn ObservationSource,
        mut sink: impl FnMut(&FrameOutput, &TwinState) -> Result<(), EngineError>,
    ) -> Result<u64, EngineError> {
        let mut n = 0;
        while let Some(obs) = source.next_observation()? {
            let out = self.step(&obs)?;
            sink(&out, &self.twin)?;
            n += 1;
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskFormat {
    #[default]
    Json,
    Png,
}

impl MaskFormat {
    pub fn ext(self) -> &'static str {
        match self {
            MaskFormat::Json => "json",
            MaskFormat::Png => "png",
        }
    }
}

/// Writes per-frame prediction files and, on finish, the index entry.
pub struct PredictionWriter {
    dir: PathBuf,
    id: String,
    entry: PredictionEntry,
    format: MaskFormat,
    twin_dump: Option<(PathBuf, BufWriter<File>)>,
}

impl PredictionWriter {
    pub fn new(dir: &Path, id: &str, query: &str, format: MaskFormat) -> Result<Self, EngineError> {
        std::fs::create_dir_all(dir).map_err(|e| EngineError::output(dir, e))?;
        let index = PredictionIndex::load(dir).map_err(|e| EngineError::output(dir, e))?;
        Ok(PredictionWriter {
            dir: dir.to_path_buf(),
            id: id.into(),
            entry: PredictionEntry {
                query_index: index.query_index_for(id),
                query: query.into(),
                frames: BTreeMap::new(),
            },
            format,
            twin_dump: None,
        })
    }

    /// Also dump one twin snapshot per frame to `twin/<id>.jsonl`.
    pub fn emit_twin(&mut self) -> Result<(), EngineError> {
        let d = self.dir.join("twin");
        std::fs::create_dir_all(&d).map_err(|e| EngineError::output(&d, e))?;
        let p = d.join(format!("{}.jsonl", self.id));
        let f = File::create(&p).map_err(|e| EngineError::output(&p, e))?;
        self.twin_dump = Some((p, BufWriter::new(f)));
        Ok(())
    }

    pub fn write(&mut self, out: &FrameOutput, twin: &TwinState) -> Result<(), EngineError> {
        let name = prediction_file_name(self.entry.query_index, out.frame_index, self.format.ext());
        let path = self.dir.join(&name);
        let r: Result<(), MaskError> = match self.format {
            MaskFormat::Json => write_rle_json(&out.mask, &path),
            MaskFormat::Png => write_png(&out.mask, &path),
        };
        r.map_err(|e| EngineError::output(&path, e))?;
        self.entry.frames.insert(out.frame_index, name);
        if let (Some((p, w)), Some(g)) = (&mut self.twin_dump, twin.current()) {
            let line = serde_json::to_string(&TwinSnapshot::from(g)).expect("snapshots always serialize");
            writeln!(w, "{line}").map_err(|e| EngineError::output(p, e))?;
        }
        Ok(())
    }

    /// Merges this run's entry into `predictions.json`.
    pub fn finish(mut self) -> Result<PathBuf, EngineError> {
        if let Some((p, mut w)) = self.twin_dump.take() {
            w.flush().map_err(|e| EngineError::output(&p, e))?;
        }
        let mut index = PredictionIndex::load(&self.dir).map_err(|e| EngineError::output(&self.dir, e))?;
        index.samples.insert(self.id.clone(), self.entry);
        let path = self.dir.join(PREDICTION_INDEX);
        let tmp = self.dir.join(format!("{PREDICTION_INDEX}.tmp"));
        let text = serde_json::to_string_pretty(&index).expect("indices always serialize");
        std::fs::write(&tmp, text).map_err(|e| EngineError::output(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| EngineError::output(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::KeywordSemantic;
    use crate::evaluation::{contour_accuracy, region_similarity};
    use crate::perception::synth::{synth_scenario, template, ScenarioStream};
    use crate::perception::VecSource;
    use crate::planner::rule_plan;

    fn run_template(name: &str, cfg: &EngineConfig) -> (Vec<FrameOutput>, Vec<BinaryMask>) {
        let out = synth_scenario(&template(name).unwrap()).unwrap();
        let plan = apply_config(rule_plan(&out.query), cfg);
        let mut engine = Engine::new(plan, cfg, &out.trace.header, Box::new(KeywordSemantic)).unwrap();
        let mut src = VecSource::new(out.trace);
        let mut frames = vec![];
        engine
            .run(&mut src, |o, _| {
                frames.push(o.clone());
                Ok(())
            })
            .unwrap();
        (frames, out.gt)
    }

    fn j(frames: &[FrameOutput], gt: &[BinaryMask]) -> f64 {
        let pred: Vec<BinaryMask> = frames.iter().map(|f| f.mask.clone()).collect();
        region_similarity(&pred, gt).unwrap()
    }

    #[test]
    fn templates_reproduce_gt() {
        let cfg = EngineConfig::default();
        for name in ["semantic_l1", "spatial_behind_l2", "temporal_moved_after_l2"] {
            let (frames, gt) = run_template(name, &cfg);
            let pred: Vec<BinaryMask> = frames.iter().map(|f| f.mask.clone()).collect();
            assert_eq!(region_similarity(&pred, &gt).unwrap(), 1.0, "{name}");
            assert_eq!(contour_accuracy(&pred, &gt).unwrap(), 1.0, "{name}");
        }
    }

    #[test]
    fn no_ti_outputs_raw_masks() {
        let cfg = EngineConfig {
            temporal_integration: false,
            ..EngineConfig::default()
        };
        let (frames, _) = run_template("flicker_semantic", &cfg);
        assert!(frames.iter().all(|f| f.raw == f.mask));
    }

    #[test]
    fn ablations_on_flicker() {
        let base = EngineConfig::default();
        let (frames, gt) = run_template("flicker_moved", &base);
        let full = j(&frames, &gt);
        let no_ti = EngineConfig {
            temporal_integration: false,
            ..base.clone()
        };
        let (frames, gt) = run_template("flicker_moved", &no_ti);
        assert!(j(&frames, &gt) < full);
        let no_dt = EngineConfig {
            dt_update: false,
            ..base.clone()
        };
        let (frames, gt) = run_template("flicker_moved", &no_dt);
        assert!(j(&frames, &gt) < 0.5);
        let (a, gt) = run_template("semantic_l1", &base);
        let (b, _) = run_template("semantic_l1", &no_dt);
        assert_eq!(j(&a, &gt), j(&b, &gt));
    }

    #[test]
    fn missing_depth_is_rejected_up_front() {
        let mut spec = template("spatial_behind_l2").unwrap();
        spec.target = crate::perception::synth::TargetSpec::Category {
            category: "box".into(),
        };
        spec.with_depth = false;
        let header = spec.header();
        let plan = rule_plan("segment whatever is behind the table");
        let r = Engine::new(plan, &EngineConfig::default(), &header, Box::new(KeywordSemantic));
        assert!(matches!(
            r,
            Err(EngineError::MissingProvider {
                role: ProviderRole::Depth
            })
        ));
    }

    #[test]
    fn depth_is_dropped_when_not_selected() {
        let out = synth_scenario(&template("semantic_l1").unwrap()).unwrap();
        let cfg = EngineConfig::default();
        let mut engine =
            Engine::new(rule_plan(&out.query), &cfg, &out.trace.header, Box::new(KeywordSemantic)).unwrap();
        engine.step(&out.trace.frames[0]).unwrap();
        let g = engine.twin().current().unwrap();
        assert!(g.nodes.values().all(|n| n.h_spa.depth.is_none()));
    }

    #[test]
    fn window_stays_bounded() {
        let mut spec = template("semantic_l1").unwrap();
        spec.frames = 300;
        spec.objects.iter_mut().for_each(|o| o.velocity = [0.0, 0.0]);
        let header = spec.header();
        let plan = rule_plan(&spec.query());
        let w = plan.window_size;
        let mut engine = Engine::new(plan, &EngineConfig::default(), &header, Box::new(KeywordSemantic)).unwrap();
        let mut src = ScenarioStream::new(spec).unwrap();
        let n = engine
            .run(&mut src, |_, twin| {
                assert!(twin.window().len() <= w + 1);
                Ok(())
            })
            .unwrap();
        assert_eq!(n, 300);
    }

    #[test]
    fn bad_node_params() {
        let mut plan = rule_plan("the cup");
        let id = plan.output_node.clone();
        let node = plan.nodes.iter_mut().find(|n| n.id == id).unwrap();
        node.params.insert("move_threshold".into(), serde_json::json!("far"));
        let header = template("semantic_l1").unwrap().header();
        let r = Engine::new(plan, &EngineConfig::default(), &header, Box::new(KeywordSemantic));
        assert!(matches!(r, Err(EngineError::Param { .. }) | Err(EngineError::Plan(_))));
    }

    #[test]
    fn writer_merges_index() {
        let dir = tempfile::tempdir().unwrap();
        let out = synth_scenario(&template("semantic_l1").unwrap()).unwrap();
        let cfg = EngineConfig::default();
        for id in ["a", "b"] {
            let mut engine = Engine::new(
                rule_plan(&out.query),
                &cfg,
                &out.trace.header,
                Box::new(KeywordSemantic),
            )
            .unwrap();
            let mut w = PredictionWriter::new(dir.path(), id, &out.query, MaskFormat::Json).unwrap();
            w.emit_twin().unwrap();
            engine
                .run(&mut VecSource::new(out.trace.clone()), |o, t| w.write(o, t))
                .unwrap();
            w.finish().unwrap();
        }
        let index = PredictionIndex::load(dir.path()).unwrap();
        assert_eq!(index.samples["a"].query_index, 0);
        assert_eq!(index.samples["b"].query_index, 1);
        assert_eq!(index.samples["b"].frames.len(), 8);
        assert!(dir.path().join("q0001_f0007.json").exists());
        let dump = std::fs::read_to_string(dir.path().join("twin/a.jsonl")).unwrap();
        assert_eq!(dump.lines().count(), 8);
    }
}
