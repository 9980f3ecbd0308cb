use jitwin_core::config::EngineConfig;
use jitwin_core::dsl::KeywordSemantic;
use jitwin_core::engine::{apply_config, Engine, EngineError};
use jitwin_core::perception::synth::{synth_scenario, template};
use jitwin_core::perception::{FrameObservation, ObservationSource, PerceptionError, TraceHeader, VecSource};
use jitwin_core::planner::rule_plan;

/// Yields `good` frames from an inner source, then fails.
struct Failing {
    inner: VecSource,
    good: u64,
    served: u64,
}

impl ObservationSource for Failing {
    fn header(&self) -> &TraceHeader {
        self.inner.header()
    }

    fn next_observation(&mut self) -> Result<Option<FrameObservation>, PerceptionError> {
        if self.served == self.good {
            return Err(PerceptionError::Provider("segmenter crashed".into()));
        }
        self.served += 1;
        self.inner.next_observation()
    }
}

#[test]
fn provider_failure_after_last_good_frame() {
    let out = synth_scenario(&template("semantic_l1").unwrap()).unwrap();
    let cfg = EngineConfig::default();
    let mut engine = Engine::new(rule_plan(&out.query), &cfg, &out.trace.header, Box::new(KeywordSemantic)).unwrap();
    let mut src = Failing {
        inner: VecSource::new(out.trace),
        good: 3,
        served: 0,
    };
    let mut emitted = vec![];
    let r = engine.run(&mut src, |o, _| {
        emitted.push(o.frame_index);
        Ok(())
    });
    assert!(matches!(r, Err(EngineError::Perception(PerceptionError::Provider(_)))));
    assert_eq!(emitted, [0, 1, 2]);
}

#[test]
fn config_window_extends_the_plan() {
    let cfg = EngineConfig {
        window: 9,
        lambda: 0.3,
        ..EngineConfig::default()
    };
    let plan = apply_config(rule_plan("what moved"), &cfg);
    assert_eq!(plan.window_size, 9);
    assert_eq!(plan.tracking.lambda, 0.3);
    let plan = apply_config(rule_plan("what moved in the last 12 frames"), &cfg);
    assert_eq!(plan.window_size, 12);
}

#[test]
fn no_ms_still_runs_on_a_narrow_trace() {
    let out = synth_scenario(&template("semantic_l1").unwrap()).unwrap();
    let cfg = EngineConfig {
        model_selection: false,
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(rule_plan(&out.query), &cfg, &out.trace.header, Box::new(KeywordSemantic)).unwrap();
    assert_eq!(engine.plan().models.len(), 4);
    let mut masks = vec![];
    engine
        .run(&mut VecSource::new(out.trace), |o, _| {
            masks.push(o.mask.clone());
            Ok(())
        })
        .unwrap();
    assert_eq!(masks, out.gt);
}
