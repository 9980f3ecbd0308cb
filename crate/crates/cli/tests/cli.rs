use std::path::Path;
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use jitwin_core::mask::{write_rle_json, Bbox, BinaryMask};
use jitwin_core::perception::{write_trace, PerceptionTrace, ProviderRole, TraceHeader};

fn jitwin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jitwin"))
        .args(args)
        .env_remove("TWIN_LLM_ENDPOINT")
        .env_remove("TWIN_LLM_MODEL")
        .env_remove("TWIN_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_rule_outputs() {
    let o = jitwin(&["plan", "--rule", "the cup"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let reasoning: Vec<_> = v["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|n| n["kind"] == "reasoning")
        .collect();
    assert_eq!(reasoning.len(), 1);
    assert_eq!(reasoning[0]["op"], "semantic_select");

    let o = jitwin(&["plan", "--rule", "behind the cup"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["models"].as_array().unwrap().iter().any(|m| m["role"] == "depth"));
}

#[test]
fn plan_exit_codes() {
    let o = jitwin(&["plan", "--endpoint", "not a url", "the cup"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed endpoint URL"));
    assert_eq!(code(&jitwin(&["plan", "--rule", "   "])), 2);
    assert_eq!(code(&jitwin(&["plan"])), 2);
    // nothing listens on port 9 of the loopback interface
    let o = jitwin(&["plan", "--endpoint", "http://127.0.0.1:9/v1/chat/completions", "the cup"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn run_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    let out = dir.path().join("out");
    let o = jitwin(&["run", "--rule", "--trace", s(&bad), "--query", "the cup", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let missing = dir.path().join("missing.jsonl");
    let o = jitwin(&["run", "--rule", "--trace", s(&missing), "--query", "the cup", "--out", s(&out)]);
    assert_eq!(code(&o), 2);

    // a depth query on a trace without depth
    let t = dir.path().join("nodepth.jsonl");
    write_trace(
        &PerceptionTrace {
            header: TraceHeader {
                width: 8,
                height: 8,
                embedding_dim: 4,
                frame_count: 0,
                providers: vec![ProviderRole::Segmenter, ProviderRole::Embedder],
            },
            frames: vec![],
        },
        &t,
    )
    .unwrap();
    let o = jitwin(&["run", "--rule", "--trace", s(&t), "--query", "what is behind the cup", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("depth"));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"alpha": 2.0}"#).unwrap();
    let o = jitwin(&["run", "--rule", "--trace", s(&t), "--query", "the cup", "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_trace_gives_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("empty.jsonl");
    write_trace(
        &PerceptionTrace {
            header: TraceHeader {
                width: 8,
                height: 8,
                embedding_dim: 4,
                frame_count: 0,
                providers: vec![ProviderRole::Segmenter, ProviderRole::Embedder],
            },
            frames: vec![],
        },
        &t,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = jitwin(&["run", "--rule", "--trace", s(&t), "--query", "the cup", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("predictions.json")).unwrap()).unwrap();
    assert_eq!(v["samples"]["empty"]["frames"], serde_json::json!({}));
}

fn synth(dir: &Path, template: &str) {
    let o = jitwin(&["synth", "--out", s(dir), "--template", template, "--images"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn prediction_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "spatial_behind_l2");
    let trace = dir.path().join("spatial_behind_l2.jsonl");
    let mut outputs = vec![];
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let o = jitwin(&[
            "run",
            "--rule",
            "--trace",
            s(&trace),
            "--query",
            "segment whatever is behind the table",
            "--out",
            s(&out),
            "--emit-twin",
        ]);
        assert_eq!(code(&o), 0);
        outputs.push(prediction_bytes(&out));
        assert_eq!(
            std::fs::read_to_string(out.join("twin/spatial_behind_l2.jsonl")).unwrap().lines().count(),
            8
        );
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0].len(), 9);
}

#[test]
fn stored_plan_and_png_output() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "semantic_l1");
    let trace = dir.path().join("semantic_l1.jsonl");
    let plan = dir.path().join("plans/semantic_l1.json");
    let preds = dir.path().join("preds");
    let o = jitwin(&["run", "--trace", s(&trace), "--plan", s(&plan), "--out", s(&preds), "--format", "png"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(preds.join("q0000_f0000.png").exists());
    let o = jitwin(&["eval", "--predictions", s(&preds), "--manifest", s(&dir.path().join("dataset.json")), "--json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["samples"][0]["j"], 1.0);

    let bad_plan = dir.path().join("bad_plan.json");
    std::fs::write(&bad_plan, r#"{"version": 1}"#).unwrap();
    let o = jitwin(&["run", "--trace", s(&trace), "--plan", s(&bad_plan), "--out", s(&preds)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_empty_predictions_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "spatial_behind_l2");
    let preds = dir.path().join("none");
    std::fs::create_dir_all(&preds).unwrap();
    let o = jitwin(&["eval", "--predictions", s(&preds), "--manifest", s(&dir.path().join("dataset.json")), "--json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["samples"][0]["j"], 0.0);
    assert_eq!(v["samples"][0]["f"], 0.0);
}

#[test]
fn render_overlays() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    let preds = dir.path().join("preds");
    std::fs::create_dir_all(&frames).unwrap();
    std::fs::create_dir_all(&preds).unwrap();
    let (w, h) = (10, 6);
    let masks = [
        BinaryMask::new(w, h).unwrap(),
        BinaryMask::full(w, h).unwrap(),
        BinaryMask::from_bbox(w, h, &Bbox::new(0, 0, 5, 6)).unwrap(),
    ];
    let mut index = serde_json::Map::new();
    for (t, m) in masks.iter().enumerate() {
        RgbImage::from_pixel(w, h, Rgb([10, 200, 30]))
            .save(frames.join(format!("f{t:04}.png")))
            .unwrap();
        let name = format!("q0000_f{t:04}.json");
        write_rle_json(m, &preds.join(&name)).unwrap();
        index.insert(t.to_string(), name.into());
    }
    let idx = serde_json::json!({"samples": {"v": {"query_index": 0, "query": "q", "frames": index}}});
    std::fs::write(preds.join("predictions.json"), idx.to_string()).unwrap();

    let out = dir.path().join("out");
    let o = jitwin(&["render", "--frames", s(&frames), "--predictions", s(&preds), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let base = Rgb([10u8, 200, 30]);
    let tinted = |t: usize| {
        image::open(out.join(format!("f{t:04}.png")))
            .unwrap()
            .to_rgb8()
            .pixels()
            .filter(|p| **p != base)
            .count()
    };
    assert_eq!(tinted(0), 0);
    assert_eq!(tinted(1), (w * h) as usize);
    assert_eq!(tinted(2), (w * h / 2) as usize);

    let small = dir.path().join("small");
    std::fs::create_dir_all(&small).unwrap();
    for t in 0..3 {
        RgbImage::new(4, 4).save(small.join(format!("f{t:04}.png"))).unwrap();
    }
    let o = jitwin(&["render", "--frames", s(&small), "--predictions", s(&preds), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_unknown_template() {
    let dir = tempfile::tempdir().unwrap();
    let o = jitwin(&["synth", "--out", s(dir.path()), "--template", "nope"]);
    assert_eq!(code(&o), 2);
}
