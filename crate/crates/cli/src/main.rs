//! Command-line pipeline: generate synthetic scenes, mine conflicts, run
//! guided closed-loop rollouts, evaluate metrics, and compare runs.
//!
//! Exit codes: 0 success, 1 partial failure (some scenes failed), 2 invalid
//! configuration or unusable inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crashgen_core::canon::to_canonical_json;
use crashgen_core::files::{
    self, comparison_table, load_run_config, load_scene, report_to_csv, ConflictFileDoc,
    LoadedScene, ResultFileDoc, RunConfig, SceneErrorDoc,
};
use crashgen_core::metrics::{evaluate, EvalScene, MetricsReport};
use crashgen_core::mining::mine_scene;
use crashgen_core::sampler::{
    best_of_candidates, derive_seed, stable_hash, ConstantVelocityDenoiser, RolloutSetup,
};
use crashgen_core::synth;

#[derive(Parser)]
#[command(name = "crashgen", version, about = "Counterfactual safety-critical scenario generation")]
struct Cli {
    /// Run configuration JSON (defaults used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scene-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled synthetic scene suite.
    GenSuite(GenSuiteArgs),
    /// Mine conflict targets from a directory of scene files.
    Mine(MineArgs),
    /// Run guided (or unguided) closed-loop rollouts.
    Rollout(RolloutArgs),
    /// Evaluate rollout results against the recorded scenes.
    Eval(EvalArgs),
    /// Render a comparison table over metric reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenSuiteArgs {
    /// Output directory for scene JSON files.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes (families cycle crossing/rear_approach/lead_braking).
    #[arg(long, default_value_t = 30)]
    count: usize,
}

#[derive(Args)]
struct MineArgs {
    /// Directory of scene JSON files.
    #[arg(long)]
    scenes: PathBuf,
    /// Output conflict file path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    scenes: PathBuf,
    /// Conflict file produced by `mine`.
    #[arg(long)]
    conflicts: PathBuf,
    /// Output directory for result files.
    #[arg(long)]
    out: PathBuf,
    /// Disable guidance entirely (baseline rollouts).
    #[arg(long)]
    unguided: bool,
    /// Disable the progressive stage schedule.
    #[arg(long)]
    no_pg: bool,
    /// Disable conflict-aware base weights.
    #[arg(long)]
    no_cw: bool,
    /// Disable adaptive arrival-time compression.
    #[arg(long)]
    no_atc: bool,
    /// Disable jerk regularization.
    #[arg(long)]
    no_jr: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of rollout result files.
    #[arg(long)]
    results: PathBuf,
    /// Directory of the original scene files.
    #[arg(long)]
    scenes: PathBuf,
    /// Output prefix; writes <prefix>.json and <prefix>.csv.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated horizons in seconds, e.g. 3,5,7.
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metric report JSON files (labels taken from file stems).
    files: Vec<PathBuf>,
    /// Output prefix; writes <prefix>.txt and <prefix>.csv.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(partial_failures) => {
            if partial_failures {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut config = match &cli.config {
        Some(path) => load_run_config(path).with_context(|| "loading run config")?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let threads = if cli.jobs == 0 { num_threads_default() } else { cli.jobs };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")?;

    match cli.command {
        Command::GenSuite(args) => cmd_gen_suite(&args, &config),
        Command::Mine(args) => pool.install(|| cmd_mine(&args, &config)),
        Command::Rollout(args) => pool.install(|| cmd_rollout(&args, &config)),
        Command::Eval(args) => cmd_eval(&args, &config),
        Command::Report(args) => cmd_report(&args),
    }
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn list_scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading scene directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .json scene files in {}", dir.display());
    }
    Ok(paths)
}

fn cmd_gen_suite(args: &GenSuiteArgs, config: &RunConfig) -> Result<bool> {
    fs::create_dir_all(&args.out)?;
    for (id, scene) in synth::gen_suite(args.count, config.seed) {
        let path = args.out.join(format!("{id}.json"));
        files::save_scene(&path, &id, &scene)?;
    }
    println!("wrote {} scenes to {}", args.count, args.out.display());
    Ok(false)
}

fn cmd_mine(args: &MineArgs, config: &RunConfig) -> Result<bool> {
    let paths = list_scene_files(&args.scenes)?;
    let outcomes: Vec<_> = paths
        .par_iter()
        .map(|path| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
            match load_scene(path) {
                Ok(loaded) => {
                    let target = mine_scene(&loaded.scene, &config.mining_rules);
                    Ok((loaded.id, target))
                }
                Err(err) => Err(SceneErrorDoc {
                    scene_id: stem,
                    message: err.to_string(),
                }),
            }
        })
        .collect();

    let mut records = Vec::new();
    let mut invalid_scenes = Vec::new();
    let mut errors = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((id, Some(target))) => records.push(files::target_to_record(&id, &target)),
            Ok((id, None)) => invalid_scenes.push(id),
            Err(e) => errors.push(e),
        }
    }
    records.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    invalid_scenes.sort();
    errors.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let had_errors = !errors.is_empty();

    let doc = ConflictFileDoc {
        schema_version: files::SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rules: config.mining_rules.clone(),
        records,
        invalid_scenes,
        errors,
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&args.out, to_canonical_json(&doc)?)?;
    println!(
        "mined {} targets ({} invalid, {} errors) -> {}",
        doc.records.len(),
        doc.invalid_scenes.len(),
        doc.errors.len(),
        args.out.display()
    );
    Ok(had_errors)
}

fn load_conflicts(path: &Path) -> Result<ConflictFileDoc> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading conflict file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing conflict file {}", path.display()))
}

fn cmd_rollout(args: &RolloutArgs, config: &RunConfig) -> Result<bool> {
    let conflicts = load_conflicts(&args.conflicts)?;
    let records: BTreeMap<String, _> = conflicts
        .records
        .iter()
        .map(|r| (r.scene_id.clone(), r))
        .collect();
    let mut guidance_cfg = config.guidance.clone();
    guidance_cfg.enable_progressive &= !args.no_pg;
    guidance_cfg.enable_conflict_aware &= !args.no_cw;
    guidance_cfg.enable_adaptive_timing &= !args.no_atc;
    guidance_cfg.enable_jerk &= !args.no_jr;

    fs::create_dir_all(&args.out)?;
    let paths = list_scene_files(&args.scenes)?;
    let denoiser = ConstantVelocityDenoiser;
    let outcomes: Vec<Result<RolloutOutcome>> = paths
        .par_iter()
        .map(|path| -> Result<RolloutOutcome> {
            let loaded = match load_scene(path) {
                Ok(l) => l,
                Err(e) => return Ok(RolloutOutcome::Failed(path.display().to_string(), e.to_string())),
            };
            let Some(record) = records.get(&loaded.id) else {
                return Ok(RolloutOutcome::Skipped(loaded.id));
            };
            let target = match files::record_to_target(record) {
                Ok(t) => t,
                Err(e) => return Ok(RolloutOutcome::Failed(loaded.id, e)),
            };
            let setup = RolloutSetup {
                scene: &loaded.scene,
                target: &target,
                denoiser: &denoiser,
                guidance: (!args.unguided).then_some(&guidance_cfg),
                sampler: &config.sampler,
            };
            let scene_seed = derive_seed(config.seed, stable_hash(&loaded.id));
            match best_of_candidates(&setup, scene_seed) {
                Ok(best) => {
                    let doc = files::result_to_doc(
                        &loaded.id,
                        loaded.scene.dt,
                        scene_seed,
                        !args.unguided,
                        &best,
                    );
                    let out = args.out.join(format!("{}.result.json", loaded.id));
                    fs::write(&out, to_canonical_json(&doc)?)?;
                    Ok(RolloutOutcome::Done)
                }
                Err(failure) => {
                    let reasons: Vec<String> = failure
                        .aborts
                        .iter()
                        .map(|a| format!("seed {} at t={}: {}", a.seed, a.t_global, a.reason))
                        .collect();
                    let out = args.out.join(format!("{}.failure.json", loaded.id));
                    fs::write(
                        &out,
                        to_canonical_json(&serde_json::json!({
                            "scene_id": loaded.id,
                            "failed_candidates": reasons,
                        }))?,
                    )?;
                    Ok(RolloutOutcome::Failed(loaded.id, "all candidates aborted".into()))
                }
            }
        })
        .collect();

    let mut done = 0usize;
    let mut partial = false;
    for outcome in outcomes {
        match outcome? {
            RolloutOutcome::Done => done += 1,
            RolloutOutcome::Skipped(id) => {
                eprintln!("warning: no mined target for scene {id}; skipped");
            }
            RolloutOutcome::Failed(id, why) => {
                eprintln!("warning: scene {id} failed: {why}");
                partial = true;
            }
        }
    }
    println!("rolled out {done} scenes -> {}", args.out.display());
    Ok(partial)
}

enum RolloutOutcome {
    Done,
    Skipped(String),
    Failed(String, String),
}

fn cmd_eval(args: &EvalArgs, config: &RunConfig) -> Result<bool> {
    let mut scenes: BTreeMap<String, LoadedScene> = BTreeMap::new();
    for path in list_scene_files(&args.scenes)? {
        match load_scene(&path) {
            Ok(loaded) => {
                scenes.insert(loaded.id.clone(), loaded);
            }
            Err(e) => eprintln!("warning: {e}"),
        }
    }
    let mut result_paths: Vec<PathBuf> = fs::read_dir(&args.results)
        .with_context(|| format!("reading results directory {}", args.results.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".result.json"))
        .collect();
    result_paths.sort();
    if result_paths.is_empty() {
        bail!("no .result.json files in {}", args.results.display());
    }

    let mut eval_scenes = Vec::new();
    let mut full_duration: f64 = 0.0;
    for path in &result_paths {
        let doc: ResultFileDoc = files::load_result(path)?;
        let Some(loaded) = scenes.get(&doc.scene_id) else {
            eprintln!("warning: orphan result {} (unknown scene); excluded", doc.scene_id);
            continue;
        };
        let pred = files::doc_to_tracks(&doc.agents);
        let reference: Vec<_> = (0..loaded.scene.agents.len())
            .map(|i| loaded.scene.future_track(i))
            .collect();
        full_duration = full_duration
            .max(pred.iter().map(|t| t.len()).max().unwrap_or(0) as f64 * doc.dt);
        eval_scenes.push(EvalScene {
            scene_id: doc.scene_id.clone(),
            dt: doc.dt,
            pred,
            reference,
            drivable: loaded.scene.drivable.clone(),
        });
    }
    if eval_scenes.is_empty() {
        bail!("no evaluable results");
    }
    let report = evaluate(&eval_scenes, &args.horizons, &config.metrics);
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let json_path = args.out.with_extension("json");
    let csv_path = args.out.with_extension("csv");
    fs::write(&json_path, to_canonical_json(&report)?)?;
    fs::write(&csv_path, report_to_csv(&report, full_duration))?;
    println!(
        "evaluated {} scenes -> {} / {}",
        eval_scenes.len(),
        json_path.display(),
        csv_path.display()
    );
    Ok(false)
}

fn cmd_report(args: &ReportArgs) -> Result<bool> {
    if args.files.is_empty() {
        bail!("report needs at least one metrics file");
    }
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for path in &args.files {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading metrics file {}", path.display()))?;
        let report: MetricsReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing metrics file {}", path.display()))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        reports.push((label, report));
    }
    let (text, csv) = comparison_table(&reports);
    print!("{text}");
    let txt_path = args.out.with_extension("txt");
    let csv_path = args.out.with_extension("csv");
    fs::write(&txt_path, &text)?;
    fs::write(&csv_path, &csv)?;
    println!("wrote {} and {}", txt_path.display(), csv_path.display());
    Ok(false)
}
