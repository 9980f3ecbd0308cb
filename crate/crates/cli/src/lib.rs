//! The `jitwin` command line: plan, run, eval, synth and render.
//!
//! Exit codes: 0 success, 2 invalid input, 3 provider failure, 4 internal
//! error.

pub mod render;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::{Rgb, RgbImage};

use jitwin_core::chat::HttpChat;
use jitwin_core::config::{ConfigError, EngineConfig};
use jitwin_core::dsl::{ChatSemantic, DslError, FallbackSemantic, KeywordSemantic, SemanticProvider};
use jitwin_core::engine::{apply_config, Engine, EngineError, MaskFormat, PredictionWriter};
use jitwin_core::evaluation::{evaluate, load_manifest, render_table, EvalError, PredictionIndex};
use jitwin_core::mask::read_mask_file;
use jitwin_core::perception::synth::{synth_scenario, template, visible_masks, write_scenario, TEMPLATES};
use jitwin_core::perception::{ObservationSource, PerceptionError, ScenarioSpec, TraceReader};
use jitwin_core::planner::{plan_query, validate_plan, ExecutionPlan, PlanError, PlannerProvider};
use jitwin_core::twin::TwinError;

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn invalid(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: message.to_string(),
        }
    }

    fn provider(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_PROVIDER,
            message: message.to_string(),
        }
    }

    fn internal(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::ProviderUnreachable(_) => CliError::provider(e),
            _ => CliError::invalid(e),
        }
    }
}

impl From<PerceptionError> for CliError {
    fn from(e: PerceptionError) -> Self {
        match e {
            PerceptionError::Provider(_) => CliError::provider(e),
            _ => CliError::invalid(e),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::invalid(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::invalid(e)
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Perception(p) => p.into(),
            EngineError::Node {
                source: DslError::Semantic(_),
                ..
            } => CliError::provider(e),
            EngineError::Plan(_)
            | EngineError::MissingProvider { .. }
            | EngineError::Param { .. }
            | EngineError::Config(_)
            | EngineError::Node { .. }
            | EngineError::Twin(TwinError::MissingCapability(_) | TwinError::DimensionMismatch(..)) => {
                CliError::invalid(e)
            }
            _ => CliError::internal(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "jitwin", version, about = "Query-driven video reasoning segmentation over perception traces")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the execution plan for a query.
    Plan(PlanArgs),
    /// Execute a query over a perception trace and write per-frame masks.
    Run(RunArgs),
    /// Score predictions against a dataset manifest.
    Eval(EvalArgs),
    /// Generate synthetic scenarios with ground truth.
    Synth(SynthArgs),
    /// Draw predicted masks over frame images.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    /// Use the rule planner even if an endpoint is configured.
    #[arg(long)]
    pub rule: bool,
    /// Chat-completions endpoint (default: TWIN_LLM_ENDPOINT).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Chat model name (default: TWIN_LLM_MODEL).
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Engine config JSON; its window and tracking values apply to the plan.
    #[arg(long)]
    pub config: Option<PathBuf>,
    pub query: String,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    pub query: Option<String>,
    /// Use a stored plan instead of planning the query.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Sample id in the predictions index (default: trace file stem).
    #[arg(long)]
    pub id: Option<String>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run every registered perception role.
    #[arg(long)]
    pub no_ms: bool,
    /// Fresh track ids every frame.
    #[arg(long)]
    pub no_dt_update: bool,
    /// No sliding window and no smoothing.
    #[arg(long)]
    pub no_ti: bool,
    /// Also write twin snapshots to `<out>/twin/<id>.jsonl`.
    #[arg(long)]
    pub emit_twin: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Png,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the JSON report (default: `<predictions>/report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Built-in scenario; repeatable. Defaults to all of them.
    #[arg(long = "template")]
    pub templates: Vec<String>,
    /// Scenario spec JSON; repeatable.
    #[arg(long = "spec")]
    pub specs: Vec<PathBuf>,
    /// Override the frame count of every scenario.
    #[arg(long)]
    pub frames: Option<u64>,
    /// Also write frame images to `<out>/frames/<id>/`.
    #[arg(long)]
    pub images: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Directory of frame images; the k-th by name is frame k.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Prediction sample to draw; needed when the index holds several.
    #[arg(long)]
    pub id: Option<String>,
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("JITWIN_LOG")
        .format_timestamp(None)
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Plan(a) => cmd_plan(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Render(a) => cmd_render(a),
    }
}

fn load_config(path: Option<&Path>, provider: &ProviderArgs) -> Result<EngineConfig, CliError> {
    let mut cfg = match path {
        Some(p) => EngineConfig::from_file(p)?,
        None => EngineConfig::default(),
    };
    if provider.endpoint.is_some() {
        cfg.provider.endpoint = provider.endpoint.clone();
    }
    if provider.model.is_some() {
        cfg.provider.model = provider.model.clone();
    }
    Ok(cfg)
}

fn planner_provider(cfg: &EngineConfig, rule: bool) -> PlannerProvider {
    if rule {
        return PlannerProvider::RuleBased;
    }
    match cfg.provider.endpoint_config() {
        Some(e) => PlannerProvider::ChatEndpoint(e),
        None => {
            log::info!("no chat endpoint configured; using the rule planner");
            PlannerProvider::RuleBased
        }
    }
}

fn cmd_plan(a: PlanArgs) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref(), &a.provider)?;
    let plan = plan_query(&a.query, &planner_provider(&cfg, a.provider.rule))?;
    println!("{}", apply_config(plan, &cfg).to_json());
    Ok(())
}

fn read_plan(path: &Path) -> Result<ExecutionPlan, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let plan: ExecutionPlan =
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    validate_plan(&plan).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    Ok(plan)
}

fn semantic_provider(cfg: &EngineConfig) -> Result<Box<dyn SemanticProvider>, CliError> {
    if !cfg.provider.chat_semantic {
        return Ok(Box::new(KeywordSemantic));
    }
    let Some(endpoint) = cfg.provider.endpoint_config() else {
        return Err(CliError::invalid("chat_semantic is set but no endpoint is configured"));
    };
    let chat = HttpChat::new(endpoint).map_err(CliError::provider)?;
    Ok(Box::new(FallbackSemantic::new(ChatSemantic::new(chat))))
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref(), &a.provider)?;
    cfg.model_selection &= !a.no_ms;
    cfg.dt_update &= !a.no_dt_update;
    cfg.temporal_integration &= !a.no_ti;

    let mut reader = TraceReader::open(&a.trace)
        .map_err(|e| CliError::invalid(format!("{}: {e}", a.trace.display())))?;
    let plan = match (&a.plan, &a.query) {
        (Some(p), _) => read_plan(p)?,
        (None, Some(q)) => apply_config(plan_query(q, &planner_provider(&cfg, a.provider.rule))?, &cfg),
        (None, None) => return Err(CliError::invalid("either --query or --plan is required")),
    };
    let id = match &a.id {
        Some(id) => id.clone(),
        None => a
            .trace
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("sample")
            .to_string(),
    };
    let format = match a.format {
        Format::Json => MaskFormat::Json,
        Format::Png => MaskFormat::Png,
    };
    let query = plan.query.clone();
    let mut engine = Engine::new(plan, &cfg, reader.header(), semantic_provider(&cfg)?)?;
    let mut writer = PredictionWriter::new(&a.out, &id, &query, format)?;
    if a.emit_twin {
        writer.emit_twin()?;
    }
    let n = engine.run(&mut reader, |o, t| writer.write(o, t))?;
    let index = writer.finish()?;
    log::info!("{id}: {n} frame(s), index {}", index.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&a.manifest)?;
    let dir = a.manifest.parent().unwrap_or(Path::new("."));
    let report = evaluate(&manifest, dir, &a.predictions)?;
    let json = serde_json::to_string_pretty(&report).map_err(CliError::internal)?;
    let path = a.report.unwrap_or_else(|| a.predictions.join("report.json"));
    std::fs::write(&path, &json).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
    if a.json {
        println!("{json}");
    } else {
        for s in &report.samples {
            println!("{:<28} {:<8} L{}  J={:.4}  F={:.4}", s.id, s.category.as_str(), s.level, s.j, s.f);
        }
        println!();
        print!("{}", render_table(&report));
    }
    Ok(())
}

const PALETTE: [[u8; 3]; 8] = [
    [230, 159, 0],
    [86, 180, 233],
    [0, 158, 115],
    [240, 228, 66],
    [0, 114, 178],
    [213, 94, 0],
    [204, 121, 167],
    [120, 120, 120],
];

fn write_frames(dir: &Path, spec: &ScenarioSpec) -> Result<(), CliError> {
    let d = dir.join("frames").join(&spec.id);
    std::fs::create_dir_all(&d).map_err(|e| CliError::internal(format!("{}: {e}", d.display())))?;
    for t in 0..spec.frames {
        let mut img = RgbImage::from_pixel(spec.width, spec.height, Rgb([32, 32, 32]));
        for (i, m) in visible_masks(spec, t).iter().enumerate() {
            let Some(m) = m else { continue };
            for (x, y, px) in img.enumerate_pixels_mut() {
                if m.get(x, y) {
                    *px = Rgb(PALETTE[i % PALETTE.len()]);
                }
            }
        }
        let p = d.join(format!("f{t:04}.png"));
        img.save(&p).map_err(|e| CliError::internal(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let mut specs = Vec::new();
    let names: Vec<String> = if a.templates.is_empty() && a.specs.is_empty() {
        TEMPLATES.iter().map(|s| s.to_string()).collect()
    } else {
        a.templates.clone()
    };
    for name in &names {
        specs.push(template(name).ok_or_else(|| {
            CliError::invalid(format!("unknown template `{name}`; available: {}", TEMPLATES.join(", ")))
        })?);
    }
    for p in &a.specs {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?;
        specs.push(serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?);
    }
    for mut spec in specs {
        if let Some(f) = a.frames {
            spec.frames = f;
        }
        let out = synth_scenario(&spec)?;
        let sample = write_scenario(&a.out, &out)?;
        if a.images {
            write_frames(&a.out, &spec)?;
        }
        println!("{}\t{}\t{}", sample.id, sample.video, sample.query);
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<(), CliError> {
    let index = PredictionIndex::load(&a.predictions)?;
    let entry = match &a.id {
        Some(id) => index
            .samples
            .get(id)
            .ok_or_else(|| CliError::invalid(format!("no predictions for `{id}`")))?,
        None if index.samples.len() == 1 => index.samples.values().next().expect("one entry"),
        None => {
            return Err(CliError::invalid(format!(
                "{} prediction samples found; choose one with --id",
                index.samples.len()
            )))
        }
    };
    let frames = render::frame_files(&a.frames).map_err(|e| CliError::invalid(format!("{}: {e}", a.frames.display())))?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::internal(format!("{}: {e}", a.out.display())))?;
    for (&t, name) in &entry.frames {
        let frame_path = frames
            .get(t as usize)
            .ok_or_else(|| CliError::invalid(format!("no frame image for frame {t}")))?;
        let img = image::open(frame_path)
            .map_err(|e| CliError::invalid(format!("{}: {e}", frame_path.display())))?
            .to_rgb8();
        let mask = read_mask_file(&a.predictions.join(name)).map_err(|e| CliError::invalid(format!("{name}: {e}")))?;
        let blended = render::overlay(&img, &mask).map_err(|e| CliError::invalid(format!("frame {t}: {e}")))?;
        let p = a.out.join(format!("f{t:04}.png"));
        blended.save(&p).map_err(|e| CliError::internal(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
