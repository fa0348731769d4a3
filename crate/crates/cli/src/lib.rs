//! `taskrep` command line: benchmark runs, single verbose trials, grounding
//! dumps, fixture linting and report rendering.
//!
//! Exit codes: 0 on success, 1 on a task or configuration error, 2 on an
//! internal error or bad usage.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use taskrep_core::cog::remote::{RemoteBackend, RemoteConfig};
use taskrep_core::cog::TaskScript;
use taskrep_core::harness::{
    render_table, run_benchmark, AblationMode, BenchConfig, BenchmarkReport, HarnessError,
    PreparedTask, ProfileSpec, TrialConfig,
};
use taskrep_core::planner::ExecConfig;
use taskrep_core::scene::scene_load;
use taskrep_core::toolkit::registry_load;

#[derive(Parser, Debug)]
#[command(
    name = "taskrep",
    version,
    about = "Task-adaptive spatial representation benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the benchmark suite and print the results table.
    Run(RunArgs),
    /// Run one seed of one task and print its log.
    Trial(TrialArgs),
    /// Print the stage plans grounded for one task.
    Ground(GroundArgs),
    /// Check scene, task, registry and benchmark files.
    Validate(ValidateArgs),
    /// Render a stored JSON report as a table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Benchmark config; defaults to the shipped suite.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<AblationMode>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// none, default or occluded.
    #[arg(long)]
    profile: Option<String>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
    /// Also print elapsed wall-clock time to stderr.
    #[arg(long)]
    wall_time: bool,
}

#[derive(Args, Debug)]
struct TaskArgs {
    /// Task script.
    #[arg(long)]
    task: PathBuf,
    /// Scene file; defaults to the one the script names.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Tool registry; defaults to the shipped one.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    mode: AblationMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "default")]
    profile: String,
}

#[derive(Args, Debug)]
struct TrialArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct GroundArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Ground with a chat-completion endpoint instead of the script oracle.
    /// The bearer token is read from TASKREP_API_KEY.
    #[arg(long, requires = "model")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Files to check; defaults to the shipped fixtures.
    paths: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    report: PathBuf,
}

enum Failure {
    Config(String),
    Internal(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Runs the command line and returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut out = std::io::stdout().lock();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, &mut out),
        Command::Trial(a) => cmd_trial(a, &mut out),
        Command::Ground(a) => cmd_ground(a, &mut out),
        Command::Validate(a) => cmd_validate(a, &mut out),
        Command::Report(a) => cmd_report(a, &mut out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            2
        }
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn emit(out: &mut dyn Write, text: &str) -> Outcome {
    out.write_all(text.as_bytes()).map_err(internal)
}

fn default_config() -> PathBuf {
    taskrep_core::fixtures_dir().join("bench.toml")
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Outcome {
    let mut cfg = BenchConfig::load(a.config.unwrap_or_else(default_config))?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(n) = a.trials {
        cfg.trials = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(p) = a.profile {
        cfg.profile = ProfileSpec::Named(p);
    }
    let start = Instant::now();
    let report = run_benchmark(&cfg)?;
    if a.wall_time {
        eprintln!("wall time {:.3} s", start.elapsed().as_secs_f64());
    }
    let json = report.to_json();
    if let Some(path) = &a.out {
        std::fs::write(path, &json).map_err(|e| internal(format!("{}: {e}", path.display())))?;
    }
    if a.json {
        emit(out, &json)
    } else {
        emit(out, &render_table(&report))
    }
}

fn trial_config(a: &TaskArgs) -> Result<TrialConfig, Failure> {
    let registry = a
        .registry
        .clone()
        .unwrap_or_else(|| taskrep_core::fixtures_dir().join("registry.json"));
    let profile = ProfileSpec::Named(a.profile.clone()).resolve()?;
    Ok(TrialConfig {
        scene: a.scene.clone(),
        mode: a.mode,
        seed: a.seed,
        trials: 1,
        profile,
        exec: ExecConfig::default(),
        ..TrialConfig::new(&a.task, registry)
    })
}

fn cmd_trial(a: TrialArgs, out: &mut dyn Write) -> Outcome {
    let cfg = trial_config(&a.task)?;
    let task = PreparedTask::load(&cfg)?;
    let r = task.run(cfg.seed)?;
    if a.json {
        let s = serde_json::to_string_pretty(&r).map_err(internal)?;
        return emit(out, &format!("{s}\n"));
    }
    let mut text = format!("task {} seed {} mode {}\n", r.task, r.seed, cfg.mode);
    for e in &r.log {
        text.push_str(&format!(
            "  [{}] t={:8.3} {:<10} {:<14} {} {}\n",
            e.stage,
            e.t,
            format!("{:?}", e.module).to_lowercase(),
            e.event,
            if e.ok { "ok  " } else { "FAIL" },
            e.message
        ));
    }
    match r.failure {
        None => text.push_str(&format!("success in {:.3} s\n", r.time_s)),
        Some(c) => text.push_str(&format!(
            "failure ({c}) at stage {}: {}\n",
            r.failure_stage.unwrap_or(0),
            r.message.as_deref().unwrap_or("")
        )),
    }
    emit(out, &text)
}

fn cmd_ground(a: GroundArgs, out: &mut dyn Write) -> Outcome {
    let cfg = trial_config(&a.task)?;
    let task = PreparedTask::load(&cfg)?;
    let scene = task.randomized_scene(cfg.seed)?;
    let plans = match (&a.endpoint, &a.model) {
        (Some(endpoint), Some(model)) => {
            let backend = RemoteBackend::http(RemoteConfig::new(endpoint, model));
            task.ground_with(&backend, &scene, cfg.seed)
        }
        _ => task.ground(&scene, cfg.seed),
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    let s = serde_json::to_string_pretty(&plans).map_err(internal)?;
    emit(out, &format!("{s}\n"))
}

fn shipped_fixtures() -> Vec<PathBuf> {
    let dir = taskrep_core::fixtures_dir();
    let mut paths = vec![dir.join("registry.json"), dir.join("bench.toml")];
    for sub in ["scenes", "tasks"] {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir.join(sub))
            .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
            .unwrap_or_default();
        files.sort();
        paths.extend(files);
    }
    paths
}

/// Checks one file, guessing its kind from its contents.
fn validate_file(path: &Path) -> Result<&'static str, String> {
    if path.extension().is_some_and(|e| e == "toml") {
        let cfg = BenchConfig::load(path).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        for t in &cfg.tasks {
            let tc = cfg.trial_config(t).map_err(|e| e.to_string())?;
            PreparedTask::load(&tc).map_err(|e| e.to_string())?;
        }
        return Ok("benchmark config");
    }
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if v.get("tools").is_some() {
        registry_load(path).map_err(|e| e.to_string())?;
        Ok("registry")
    } else if v.get("stages").is_some() {
        let script = TaskScript::load(path).map_err(|e| e.to_string())?;
        let scene = scene_load(script.scene_path(path)).map_err(|e| e.to_string())?;
        script
            .validate(&scene)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        Ok("task script")
    } else if v.get("objects").is_some() {
        scene_load(path).map_err(|e| e.to_string())?;
        Ok("scene")
    } else {
        Err(format!(
            "{}: not a scene, task script, registry or benchmark config",
            path.display()
        ))
    }
}

fn cmd_validate(a: ValidateArgs, out: &mut dyn Write) -> Outcome {
    let paths = if a.paths.is_empty() {
        shipped_fixtures()
    } else {
        a.paths
    };
    let mut problems = Vec::new();
    let mut text = String::new();
    for p in &paths {
        match validate_file(p) {
            Ok(kind) => text.push_str(&format!("ok  {} ({kind})\n", p.display())),
            Err(e) => {
                text.push_str(&format!("bad {}\n", p.display()));
                problems.push(e);
            }
        }
    }
    emit(out, &text)?;
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Config(problems.join("\n")))
    }
}

fn cmd_report(a: ReportArgs, out: &mut dyn Write) -> Outcome {
    let text = std::fs::read_to_string(&a.report)
        .map_err(|e| Failure::Config(format!("{}: {e}", a.report.display())))?;
    let report = BenchmarkReport::from_json(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", a.report.display())))?;
    emit(out, &render_table(&report))
}
