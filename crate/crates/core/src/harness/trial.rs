use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::report::{BenchmarkReport, ConfigEcho};
use super::{AblationMode, BenchConfig, ErrorCategory, FixedSet, HarnessError, TrialConfig};
use crate::cog::{
    ground, GroundError, GroundOptions, GroundingBackend, Instruction, OracleBackend, StagePlan,
    TaskScript,
};
use crate::planner::{generate_action_sequence, ExecConfig, Execution, LogEntry, Module};
use crate::rng;
use crate::scene::{randomize, scene_load, Observation, SceneState};
use crate::toolkit::{registry_load, Registry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task: String,
    pub seed: u64,
    pub success: bool,
    /// Simulated seconds: blocking extractions plus motion.
    pub time_s: f64,
    pub extraction_time_s: f64,
    pub track_ticks: usize,
    pub failure: Option<ErrorCategory>,
    pub failure_stage: Option<usize>,
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log: Vec<LogEntry>,
}

/// Category of the first module that flagged a failure.
pub fn classify_failure(log: &[LogEntry]) -> ErrorCategory {
    let Some(e) = log.iter().find(|e| !e.ok) else {
        return ErrorCategory::Other;
    };
    match e.module {
        Module::Grounding if e.event == "bindings" => ErrorCategory::ToolkitExtraction,
        Module::Grounding => ErrorCategory::Planning,
        Module::Toolkit => ErrorCategory::ToolkitExtraction,
        Module::Tracking => ErrorCategory::RepresentationTracking,
        Module::Planner => ErrorCategory::ActionGeneration,
        Module::Scene => ErrorCategory::Other,
    }
}

fn ground_entry(e: &GroundError) -> LogEntry {
    let (stage, event) = match e {
        GroundError::Bindings { stage, .. } => (*stage, "bindings".to_string()),
        GroundError::Select { stage, .. } | GroundError::Emit { stage, .. } => {
            (*stage, "select".to_string())
        }
        other => (
            0,
            other
                .phase()
                .map(|p| p.to_string())
                .unwrap_or_else(|| "instruction".into()),
        ),
    };
    LogEntry {
        stage,
        t: 0.0,
        module: Module::Grounding,
        event,
        ok: false,
        message: e.to_string(),
    }
}

/// A task with its files loaded and the mode's registry built.
#[derive(Clone, Debug)]
pub struct PreparedTask {
    pub name: String,
    pub script: TaskScript,
    pub scene: SceneState,
    /// Registry the oracle draws success estimates from.
    pub full_registry: Registry,
    /// Registry tools are selected from under the mode.
    pub registry: Registry,
    pub mode: AblationMode,
    pub no_cog_error_p: f64,
    pub exec: ExecConfig,
}

impl PreparedTask {
    pub fn load(cfg: &TrialConfig) -> Result<PreparedTask, HarnessError> {
        cfg.validate()?;
        let script = TaskScript::load(&cfg.task)?;
        let scene_path = cfg
            .scene
            .clone()
            .unwrap_or_else(|| script.scene_path(&cfg.task));
        let scene = scene_load(&scene_path)?;
        let registry = registry_load(&cfg.registry)?;
        Self::from_parts(script, scene, registry, cfg)
    }

    /// Builds a task from loaded files; the paths in `cfg` are ignored.
    pub fn from_parts(
        script: TaskScript,
        scene: SceneState,
        full_registry: Registry,
        cfg: &TrialConfig,
    ) -> Result<PreparedTask, HarnessError> {
        cfg.validate()?;
        script.validate(&scene)?;
        let registry = match cfg.mode.fixed() {
            None => full_registry.clone(),
            Some(set) => {
                let names = match set {
                    FixedSet::Sp => &cfg.ablation.sp_tools,
                    FixedSet::Vpv => &cfg.ablation.vpv_tools,
                };
                let names: Vec<&str> = names.iter().map(String::as_str).collect();
                full_registry.restricted(&names)?
            }
        };
        Ok(PreparedTask {
            name: script.name.clone(),
            script,
            scene,
            full_registry,
            registry,
            mode: cfg.mode,
            no_cog_error_p: cfg.ablation.no_cog_error_p,
            exec: cfg.profile.apply(&cfg.exec),
        })
    }

    /// The trial scene for `seed`.
    pub fn randomized_scene(&self, seed: u64) -> Result<SceneState, HarnessError> {
        Ok(randomize(
            &self.scene,
            rng::derive(seed, "scene", &[]),
            &self.scene.placement,
        )?)
    }

    /// Grounds the task on an already randomized scene with the script oracle.
    pub fn ground(&self, scene: &SceneState, seed: u64) -> Result<Vec<StagePlan>, GroundError> {
        let mut backend =
            OracleBackend::new(self.script.clone(), self.full_registry.clone(), scene);
        if self.mode.single_shot() {
            backend = backend.with_single_shot_error(self.no_cog_error_p);
        }
        self.ground_with(&backend, scene, seed)
    }

    pub fn ground_with(
        &self,
        backend: &dyn GroundingBackend,
        scene: &SceneState,
        seed: u64,
    ) -> Result<Vec<StagePlan>, GroundError> {
        let opts = GroundOptions {
            single_shot: self.mode.single_shot(),
            force_fixed: self.mode.fixed().is_some(),
            seed: rng::derive(rng::derive(seed, "ground", &[]), &self.name, &[]),
        };
        ground(
            backend,
            &self.registry,
            &Instruction::new(&self.script.instruction),
            &Observation::clear(scene),
            &opts,
        )
    }

    /// Randomize, ground, execute and score one trial.
    pub fn run(&self, seed: u64) -> Result<TrialResult, HarnessError> {
        Ok(self.run_detailed(seed)?.result)
    }

    /// [`PreparedTask::run`] keeping the trial scene and the execution.
    pub fn run_detailed(&self, seed: u64) -> Result<TrialRun, HarnessError> {
        let scene = self.randomized_scene(seed)?;
        let plans = match self.ground(&scene, seed) {
            Ok(p) => p,
            Err(e) => {
                let entry = ground_entry(&e);
                let result = TrialResult {
                    task: self.name.clone(),
                    seed,
                    success: false,
                    time_s: 0.0,
                    extraction_time_s: 0.0,
                    track_ticks: 0,
                    failure: Some(classify_failure(std::slice::from_ref(&entry))),
                    failure_stage: Some(entry.stage),
                    message: Some(entry.message.clone()),
                    log: vec![entry],
                };
                return Ok(TrialRun {
                    result,
                    initial: scene,
                    execution: None,
                });
            }
        };
        let exec_cfg = ExecConfig {
            seed: rng::derive(seed, "exec", &[]),
            ..self.exec.clone()
        };
        let ex = generate_action_sequence(&plans, &scene, &self.registry, &exec_cfg);
        let satisfied = self.script.success.evaluate(&ex.scene)?;
        let success = ex.failure.is_none() && satisfied;
        let (failure, failure_stage, message) = if success {
            (None, None, None)
        } else {
            let first = ex.log.iter().find(|e| !e.ok);
            let message = match (&ex.failure, first) {
                (_, Some(e)) => e.message.clone(),
                (Some(f), None) => f.message.clone(),
                (None, None) => "success predicate not satisfied".to_string(),
            };
            (
                Some(classify_failure(&ex.log)),
                first
                    .map(|e| e.stage)
                    .or(ex.failure.as_ref().map(|f| f.stage)),
                Some(message),
            )
        };
        let result = TrialResult {
            task: self.name.clone(),
            seed,
            success,
            time_s: ex.scene.clock,
            extraction_time_s: ex.extraction_time_s,
            track_ticks: ex.track_ticks,
            failure,
            failure_stage,
            message,
            log: ex.log.clone(),
        };
        Ok(TrialRun {
            result,
            initial: scene,
            execution: Some(ex),
        })
    }
}

/// One trial with its randomized scene and, if grounding succeeded, the
/// execution.
#[derive(Clone, Debug)]
pub struct TrialRun {
    pub result: TrialResult,
    pub initial: SceneState,
    pub execution: Option<Execution>,
}

/// Loads the configured files and runs one seed.
pub fn run_trial(cfg: &TrialConfig, seed: u64) -> Result<TrialResult, HarnessError> {
    PreparedTask::load(cfg)?.run(seed)
}

/// Runs jobs on `workers` threads; results come back in job order.
fn run_parallel<T: Send, F>(jobs: usize, workers: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let v = f(i);
                slots.lock().expect("no worker panicked")[i] = Some(v);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|v| v.expect("every job ran"))
        .collect()
}

/// Runs every task for `trials` seeds per repeat. Repeat `r` uses seeds
/// `seed + r·trials ..`; the report does not depend on the worker count.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport, HarnessError> {
    cfg.validate()?;
    let tasks: Vec<PreparedTask> = cfg
        .tasks
        .iter()
        .map(|t| PreparedTask::load(&cfg.trial_config(t)?))
        .collect::<Result<_, _>>()?;
    let n = cfg.trials;
    let per_repeat = tasks.len() * n;
    let jobs = cfg.repeats * per_repeat;
    let seed_of = |r: usize, i: usize| cfg.seed.wrapping_add((r * n + i) as u64);
    let results = run_parallel(jobs, cfg.worker_count(), |j| {
        let (r, rest) = (j / per_repeat, j % per_repeat);
        let (t, i) = (rest / n, rest % n);
        tasks[t].run(seed_of(r, i)).map(|mut res| {
            res.log.clear();
            res
        })
    });
    let trials: Vec<TrialResult> = results.into_iter().collect::<Result<_, _>>()?;
    let repeats: Vec<Vec<TrialResult>> = trials
        .chunks(per_repeat)
        .map(<[TrialResult]>::to_vec)
        .collect();
    let task_names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    let seeds = (0..cfg.repeats)
        .flat_map(|r| (0..n).map(move |i| (r, i)))
        .map(|(r, i)| seed_of(r, i))
        .collect();
    Ok(BenchmarkReport::build(
        ConfigEcho::new(cfg)?,
        &task_names,
        repeats,
        seeds,
    ))
}
