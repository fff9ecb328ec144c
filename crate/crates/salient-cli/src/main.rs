//! `salient`: one binary driving the whole pipeline. Exit codes: 0 success,
//! 1 data errors (malformed or invalid input content), 2 usage errors
//! (bad flags, missing input files). Failures print machine-readable JSON
//! on standard error. `SALIENT_THREADS` caps internal parallelism (0 = auto).

mod overlay;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use salient_core::clustering::{ClusterParams, MinSizePolicy, SpatialMetric};
use salient_core::consolidation::consolidate;
use salient_core::datasetio::{
    read_detections, read_groundtruth, unknown_categories, write_dataset,
};
use salient_core::evalmetrics::{evaluate, IOU_THRESHOLDS};
use salient_core::planskeleton::{
    build_prompt, build_schema, expand_plan, parse_plan, pick_place_skills, subsample_frames,
    FullPlan, HttpBackend, HttpBackendConfig, MockBackend, PlanRequest, PlannerBackend, SkillSet,
};
use salient_core::scenegraph::{
    load_groups, replay_stream, FitnessParams, SceneGraph, SceneGraphError,
};
use salient_core::synth::{generate_spec, parse_synth_config, TrackOrigin};
use salient_core::trackmodel::{load_trackset, write_trackset};

#[derive(Parser)]
#[command(
    name = "salient",
    version,
    about = "Turn human-object interaction tracks into labeled detection datasets, score detectors, replay scene graphs, and build plan skeletons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a track file into a labeled salient-objects dataset
    Consolidate(ConsolidateArgs),
    /// Score detections against ground truth on the standard metric suite
    Evaluate(EvaluateArgs),
    /// Replay an observation stream into a scene graph and dump the nodes
    ScenegraphReplay(ReplayArgs),
    /// Generate a synthetic track file (plus ground truth) from a config
    Synth(SynthArgs),
    /// Build a plan skeleton from skill definitions via a planner backend
    Plan(PlanArgs),
}

#[derive(Args)]
struct ConsolidateArgs {
    /// Input track JSONL file
    #[arg(long)]
    tracks: PathBuf,
    /// Output dataset JSON file
    #[arg(long)]
    out: PathBuf,
    /// Maximum spatial neighborhood distance (1 - IoU)
    #[arg(long, default_value_t = 0.4)]
    spatial_eps: f64,
    /// Maximum temporal neighborhood distance (1 - Jaccard)
    #[arg(long, default_value_t = 0.4)]
    temporal_eps: f64,
    /// Spatial minimum cluster size: `seed-ratio` or a fixed integer
    #[arg(long, default_value = "seed-ratio")]
    min_size: String,
    /// Minimum number of tracks per object
    #[arg(long, default_value_t = 2)]
    temporal_min_size: usize,
    /// Spatial clustering similarity
    #[arg(long, value_enum, default_value_t = MetricArg::BboxIou)]
    metric: MetricArg,
    /// Emit per-frame annotation images into this directory
    #[arg(long)]
    render_overlays: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    BboxIou,
    MaskIou,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Detections file (COCO results format)
    #[arg(long)]
    dets: PathBuf,
    /// Ground-truth file (COCO-style, `annotations` array)
    #[arg(long)]
    gt: PathBuf,
    /// Output report JSON file
    #[arg(long)]
    out: PathBuf,
    /// Score cutoff for the set-level precision/recall/F1 columns
    #[arg(long, default_value_t = 0.5)]
    score_cutoff: f64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Observation stream JSONL file
    #[arg(long)]
    stream: PathBuf,
    /// Acceptance groups JSON file
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Output graph dump JSON file
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, default_value_t = 1000.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.3)]
    seg_threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    pix_threshold: f64,
    #[arg(long, default_value_t = 0.02)]
    sighting_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    overlap_threshold: f64,
    #[arg(long, default_value_t = 0.02)]
    nn_radius: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene config (`key = value` lines, or `preset = crossing`)
    #[arg(long)]
    config: PathBuf,
    /// Output track JSONL file
    #[arg(long)]
    out: PathBuf,
    /// Also write the track-origin ground truth to this JSON file
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Skill definitions JSON file (defaults to the built-in pick/place set)
    #[arg(long)]
    skills: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendArg::Mock)]
    backend: BackendArg,
    /// `key = value` config for the http backend (endpoint, model, timeout_secs)
    #[arg(long)]
    backend_config: Option<PathBuf>,
    /// Override the mock backend's canned response with this file
    #[arg(long)]
    mock_response: Option<PathBuf>,
    /// Output plan JSON file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the planner prompt and exit
    #[arg(long)]
    emit_prompt: bool,
    /// Print the structured-output schema and exit
    #[arg(long)]
    emit_schema: bool,
    /// Demonstration frame count for subsampling
    #[arg(long, default_value_t = 0)]
    frames: usize,
    /// Demonstration frame rate
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

type CliResult<T> = Result<T, Failure>;

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(message.into()))
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file not found: {}", path.display())))
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Data)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Data)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(message) = configure_threads() {
        print_error("usage", &anyhow!(message));
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            print_error("usage", &e);
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            print_error("data", &e);
            ExitCode::from(1)
        }
    }
}

fn print_error(kind: &str, e: &anyhow::Error) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": format!("{e:#}") } }));
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SALIENT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| format!("SALIENT_THREADS must be a non-negative integer, got `{raw}`"))?;
    if n == 0 {
        return Ok(()); // auto
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn run(command: Command) -> CliResult<()> {
    let started = Instant::now();
    match command {
        Command::Consolidate(args) => run_consolidate(args, started),
        Command::Evaluate(args) => run_evaluate(args, started),
        Command::ScenegraphReplay(args) => run_replay(args, started),
        Command::Synth(args) => run_synth(args, started),
        Command::Plan(args) => run_plan(args, started),
    }
}

/// Written to `<out>.manifest.json` on every successful run.
#[derive(serde::Serialize)]
struct RunManifest {
    subcommand: String,
    parameters: BTreeMap<String, serde_json::Value>,
    inputs: BTreeMap<String, String>,
    tool_version: String,
    wall_time_ms: u128,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)
        .with_context(|| format!("hashing {}", path.display()))
        .map_err(Failure::Data)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(71);
    hex.push_str("sha256:");
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

fn write_manifest(
    out: &Path,
    subcommand: &str,
    parameters: BTreeMap<String, serde_json::Value>,
    input_paths: &[&Path],
    started: Instant,
) -> CliResult<()> {
    let mut inputs = BTreeMap::new();
    for path in input_paths {
        inputs.insert(path.display().to_string(), sha256_file(path)?);
    }
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        parameters,
        inputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_ms: started.elapsed().as_millis(),
    };
    let path = PathBuf::from(format!("{}.manifest.json", out.display()));
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_text(&path, &text)
}

fn run_consolidate(args: ConsolidateArgs, started: Instant) -> CliResult<()> {
    require_file(&args.tracks)?;
    let min_size = match args.min_size.as_str() {
        "seed-ratio" => MinSizePolicy::SeedRatio,
        other => MinSizePolicy::Fixed(other.parse().map_err(|_| {
            usage(format!(
                "--min-size takes `seed-ratio` or a positive integer, got `{other}`"
            ))
        })?),
    };
    let params = ClusterParams {
        spatial_eps: args.spatial_eps,
        temporal_eps: args.temporal_eps,
        temporal_min_size: args.temporal_min_size,
        spatial_min_size: min_size,
        spatial_metric: match args.metric {
            MetricArg::BboxIou => SpatialMetric::BBoxIou,
            MetricArg::MaskIou => SpatialMetric::MaskIou,
        },
    };
    params.validate().map_err(|e| usage(e.to_string()))?;

    let ts = load_trackset(&args.tracks).map_err(data)?;
    if ts.tracks().is_empty() {
        eprintln!("warning: track file contains no tracks; writing an empty dataset");
    }
    let (dataset, summary) = consolidate(&ts, &params).map_err(data)?;
    write_dataset(&dataset, &args.out).map_err(data)?;
    if let Some(dir) = &args.render_overlays {
        let rendered = overlay::render_overlays(&dataset, dir).map_err(Failure::Data)?;
        eprintln!("rendered {rendered} overlay frames into {}", dir.display());
    }

    let discarded = summary.discarded.len();
    println!(
        "{} objects, {} track{} discarded",
        summary.object_count,
        discarded,
        if discarded == 1 { "" } else { "s" }
    );

    let mut parameters = BTreeMap::new();
    parameters.insert("tracks".into(), json!(args.tracks.display().to_string()));
    parameters.insert("out".into(), json!(args.out.display().to_string()));
    parameters.insert(
        "params".into(),
        serde_json::to_value(&params).expect("params serialize"),
    );
    if let Some(dir) = &args.render_overlays {
        parameters.insert("render_overlays".into(), json!(dir.display().to_string()));
    }
    write_manifest(&args.out, "consolidate", parameters, &[&args.tracks], started)
}

fn run_evaluate(args: EvaluateArgs, started: Instant) -> CliResult<()> {
    require_file(&args.dets)?;
    require_file(&args.gt)?;
    if !(0.0..=1.0).contains(&args.score_cutoff) {
        return Err(usage(format!(
            "--score-cutoff must be in [0, 1], got {}",
            args.score_cutoff
        )));
    }
    let dets = read_detections(&args.dets).map_err(data)?;
    let gts = read_groundtruth(&args.gt).map_err(data)?;
    let unknown = unknown_categories(&dets, &gts);
    if !unknown.is_empty() {
        eprintln!("warning: detection categories with no ground truth: {unknown:?}");
    }

    let report = evaluate(&dets, &gts, args.score_cutoff);
    let thresholds: Vec<String> = IOU_THRESHOLDS.iter().map(|t| format!("{t:.2}")).collect();
    println!(
        "iou_thresholds: {}; score_cutoff: {}",
        thresholds.join(","),
        args.score_cutoff
    );
    println!(
        "map_50_95 {:.4}  mar_1 {:.4}  f1_50_95 {:.4}",
        report.map_50_95, report.mar_1, report.f1_50_95
    );
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_text(&args.out, &text)?;

    let mut parameters = BTreeMap::new();
    parameters.insert("dets".into(), json!(args.dets.display().to_string()));
    parameters.insert("gt".into(), json!(args.gt.display().to_string()));
    parameters.insert("score_cutoff".into(), json!(args.score_cutoff));
    parameters.insert("iou_thresholds".into(), json!(IOU_THRESHOLDS.to_vec()));
    write_manifest(
        &args.out,
        "evaluate",
        parameters,
        &[&args.dets, &args.gt],
        started,
    )
}

fn run_replay(args: ReplayArgs, started: Instant) -> CliResult<()> {
    require_file(&args.stream)?;
    let params = FitnessParams {
        alpha: args.alpha,
        seg_threshold: args.seg_threshold,
        pix_threshold: args.pix_threshold,
        sighting_weight: args.sighting_weight,
        association_overlap: args.overlap_threshold,
        nn_radius: args.nn_radius,
    };
    let groups = match &args.groups {
        Some(path) => {
            require_file(path)?;
            load_groups(path).map_err(data)?
        }
        None => Vec::new(),
    };
    let mut graph = SceneGraph::new(groups, params.clone()).map_err(|e| match e {
        SceneGraphError::BadParam { .. } | SceneGraphError::BadWindow(_) => usage(e.to_string()),
        other => data(other),
    })?;
    let stream = read_text(&args.stream)?;
    let summary = replay_stream(&mut graph, &stream).map_err(data)?;

    let mut text = serde_json::to_string_pretty(&graph.dump()).expect("dump serializes");
    text.push('\n');
    write_text(&args.dump, &text)?;
    println!(
        "{} nodes; {} integrated, {} buffered, {} rejected over {} observations",
        graph.nodes().len(),
        summary.integrated,
        summary.buffered,
        summary.rejected,
        summary.observations
    );

    let mut parameters = BTreeMap::new();
    parameters.insert("stream".into(), json!(args.stream.display().to_string()));
    parameters.insert(
        "params".into(),
        serde_json::to_value(&params).expect("params serialize"),
    );
    let mut inputs: Vec<&Path> = vec![&args.stream];
    if let Some(groups_path) = &args.groups {
        parameters.insert("groups".into(), json!(groups_path.display().to_string()));
        inputs.push(groups_path);
    }
    write_manifest(&args.dump, "scenegraph-replay", parameters, &inputs, started)
}

fn run_synth(args: SynthArgs, started: Instant) -> CliResult<()> {
    require_file(&args.config)?;
    let spec = parse_synth_config(&read_text(&args.config)?).map_err(data)?;
    let (ts, gt) = generate_spec(&spec).map_err(data)?;
    write_trackset(&ts, &args.out).map_err(data)?;

    if let Some(truth_path) = &args.truth {
        let origins: BTreeMap<&str, Option<u32>> = gt
            .iter()
            .map(|(id, origin)| {
                (
                    id,
                    match origin {
                        TrackOrigin::Object(k) => Some(k),
                        TrackOrigin::Spurious => None,
                    },
                )
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&json!({ "track_origins": origins }))
            .expect("truth serializes");
        text.push('\n');
        write_text(truth_path, &text)?;
    }

    let spurious = gt
        .iter()
        .filter(|(_, o)| *o == TrackOrigin::Spurious)
        .count();
    println!(
        "generated {} tracks over {} frames ({} spurious)",
        ts.tracks().len(),
        ts.frame_count,
        spurious
    );

    let mut parameters = BTreeMap::new();
    parameters.insert("config".into(), json!(args.config.display().to_string()));
    parameters.insert("out".into(), json!(args.out.display().to_string()));
    write_manifest(&args.out, "synth", parameters, &[&args.config], started)
}

fn run_plan(args: PlanArgs, started: Instant) -> CliResult<()> {
    let skills = match &args.skills {
        Some(path) => {
            require_file(path)?;
            SkillSet::from_json(&read_text(path)?).map_err(data)?
        }
        None => pick_place_skills(),
    };

    if args.emit_prompt {
        println!("{}", build_prompt(&skills).map_err(data)?);
        return Ok(());
    }
    if args.emit_schema {
        println!(
            "{}",
            serde_json::to_string_pretty(&build_schema(&skills).map_err(data)?)
                .expect("schema serializes")
        );
        return Ok(());
    }

    let out = args
        .out
        .as_ref()
        .ok_or_else(|| usage("--out is required unless --emit-prompt or --emit-schema"))?;
    let prompt = build_prompt(&skills).map_err(data)?;
    let schema = build_schema(&skills).map_err(data)?;
    let frame_indices = subsample_frames(args.frames, args.fps, 2.0);

    let backend: Box<dyn PlannerBackend> = match args.backend {
        BackendArg::Mock => match &args.mock_response {
            Some(path) => {
                require_file(path)?;
                Box::new(MockBackend::new(read_text(path)?))
            }
            None => Box::new(MockBackend::pick_place_example()),
        },
        BackendArg::Http => {
            let config_path = args
                .backend_config
                .as_ref()
                .ok_or_else(|| usage("--backend-config is required for the http backend"))?;
            require_file(config_path)?;
            let config =
                HttpBackendConfig::from_key_values(&read_text(config_path)?).map_err(data)?;
            Box::new(HttpBackend::new(config))
        }
    };

    let response = backend
        .generate(&PlanRequest {
            prompt: &prompt,
            schema: &schema,
            frame_indices: &frame_indices,
        })
        .map_err(data)?;
    let semantic = parse_plan(&response, &skills).map_err(data)?;
    let full = expand_plan(&FullPlan::from(semantic), &skills).map_err(data)?;
    write_text(out, &full.to_json())?;

    let targets: usize = full.steps.iter().map(|s| s.search_targets.len()).sum();
    println!("plan: {} steps ({} search targets)", full.steps.len(), targets);

    let mut parameters = BTreeMap::new();
    parameters.insert("backend".into(), json!(match args.backend {
        BackendArg::Mock => "mock",
        BackendArg::Http => "http",
    }));
    parameters.insert("frames".into(), json!(args.frames));
    parameters.insert("fps".into(), json!(args.fps));
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(path) = &args.skills {
        parameters.insert("skills".into(), json!(path.display().to_string()));
        inputs.push(path);
    }
    if let Some(path) = &args.mock_response {
        parameters.insert("mock_response".into(), json!(path.display().to_string()));
        inputs.push(path);
    }
    if let Some(path) = &args.backend_config {
        parameters.insert("backend_config".into(), json!(path.display().to_string()));
        inputs.push(path);
    }
    write_manifest(out, "plan", parameters, &inputs, started)
}
