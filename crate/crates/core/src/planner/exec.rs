use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::program::{reorder_steps, stage_bindings, Branch, StageProgram, Step};
use super::solver::{solve_stage, SolveProblem, SolverConfig};
use super::track::{track, TrackConfig};
use super::{MotionStyle, PlanError};
use crate::cog::StagePlan;
use crate::dsl::{
    Binding, BindingKey, BoundValue, ConstraintFn, ConstraintKind, EvalContext, Selection,
};
use crate::geometry::{Gripper, Trajectory, Waypoint};
use crate::rng;
use crate::scene::{observe, scene_step_with_timeline, Observation, OcclusionModel, SceneState};
use crate::toolkit::{
    extract_in_region, extract_with, AuditLog, ExtractOptions, ExtractionRecord, Granularity,
    Padding, Registry, RepresentationKind, RepresentationValue, Target, ToolSpec, ToolkitError,
};

/// Pipeline module an event belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Grounding,
    Toolkit,
    Tracking,
    Planner,
    Scene,
}

/// One executor event. `ok = false` flags the event as a failure candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: usize,
    /// Scene clock when the event was recorded.
    pub t: f64,
    pub module: Module,
    pub event: String,
    pub ok: bool,
    pub message: String,
}

/// Extraction error beyond which a successful extraction is flagged inaccurate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Accuracy {
    pub position_m: f64,
    pub angle_rad: f64,
}

impl Default for Accuracy {
    fn default() -> Self {
        Accuracy {
            position_m: 0.02,
            angle_rad: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecConfig {
    pub solver: SolverConfig,
    pub track: TrackConfig,
    /// Occlusion seen by blocking extractions at the start of a solve step.
    pub rest_occlusion: OcclusionModel,
    /// Occlusion seen by re-extractions during motion.
    pub motion_occlusion: OcclusionModel,
    /// Multiplier on every tool's noise σ; 0 extracts ground truth.
    pub noise_scale: f64,
    /// Tries per binding before the extraction counts as failed.
    pub extraction_attempts: usize,
    pub accuracy: Accuracy,
    pub waypoints: usize,
    /// Clearance kept from non-target objects.
    pub margin: f64,
    /// Extra height of the traverse above the tallest obstacle.
    pub clearance: f64,
    pub seed: u64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            solver: SolverConfig::default(),
            track: TrackConfig::default(),
            rest_occlusion: OcclusionModel::none(),
            motion_occlusion: OcclusionModel::none(),
            noise_scale: 1.0,
            extraction_attempts: 3,
            accuracy: Accuracy::default(),
            waypoints: 8,
            margin: 0.01,
            clearance: 0.02,
            seed: 0,
        }
    }
}

impl ExecConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        self.solver.validate()?;
        self.track.validate()?;
        if self.waypoints < 2 {
            return Err(PlanError::Config(
                "a stage needs at least two waypoints".into(),
            ));
        }
        if self.extraction_attempts == 0 {
            return Err(PlanError::Config(
                "extraction_attempts must be positive".into(),
            ));
        }
        if self.noise_scale.is_nan() || self.noise_scale < 0.0 {
            return Err(PlanError::Config("noise_scale must be non-negative".into()));
        }
        for (name, o) in [
            ("rest", &self.rest_occlusion),
            ("motion", &self.motion_occlusion),
        ] {
            if !(0.0..=1.0).contains(&o.p) {
                return Err(PlanError::Config(format!(
                    "{name} occlusion probability must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecFailure {
    pub stage: usize,
    pub module: Module,
    pub message: String,
}

/// Everything an execution produced, including partial results on failure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Execution {
    pub trajectories: Vec<Trajectory>,
    pub scene: SceneState,
    pub log: Vec<LogEntry>,
    #[serde(skip)]
    pub audit: AuditLog,
    /// Simulated seconds spent in blocking extractions.
    pub extraction_time_s: f64,
    pub track_ticks: usize,
    pub failure: Option<ExecFailure>,
}

/// Whether later stages still run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    EndTask,
}

/// Runs stage plans against a scene, one solve step at a time.
pub struct Executor<'r> {
    reg: &'r Registry,
    cfg: &'r ExecConfig,
    pub scene: SceneState,
    pub log: Vec<LogEntry>,
    pub audit: AuditLog,
    pub extraction_time_s: f64,
    pub track_ticks: usize,
    extractions: u64,
    motions: u64,
}

impl<'r> Executor<'r> {
    pub fn new(reg: &'r Registry, cfg: &'r ExecConfig, scene: SceneState) -> Self {
        Executor {
            reg,
            cfg,
            scene,
            log: Vec::new(),
            audit: AuditLog::default(),
            extraction_time_s: 0.0,
            track_ticks: 0,
            extractions: 0,
            motions: 0,
        }
    }

    fn note(
        &mut self,
        stage: usize,
        module: Module,
        event: &str,
        ok: bool,
        message: impl Into<String>,
    ) {
        self.log.push(LogEntry {
            stage,
            t: self.scene.clock,
            module,
            event: event.to_string(),
            ok,
            message: message.into(),
        });
    }

    fn fail(
        &mut self,
        stage: usize,
        module: Module,
        event: &str,
        message: impl Into<String>,
    ) -> ExecFailure {
        let message = message.into();
        self.note(stage, module, event, false, message.clone());
        ExecFailure {
            stage,
            module,
            message,
        }
    }

    fn scaled_tool(&self, tool: &ToolSpec) -> ToolSpec {
        let mut t = tool.clone();
        t.noise = t.noise.scaled(self.cfg.noise_scale);
        t
    }

    fn run_extractor(
        &self,
        sel: &Selection,
        binding: &Binding,
        obs: &Observation,
        opts: &ExtractOptions,
        seed: u64,
    ) -> Result<ExtractionRecord, ToolkitError> {
        let tool = self.scaled_tool(self.reg.require(&sel.tool)?);
        let crop = match (&sel.crop_tool, binding.granularity) {
            (Some(c), Granularity::Fine) => Some(self.reg.require(c)?),
            _ => None,
        };
        if let Some(crop) = crop {
            return extract_in_region(
                crop,
                &tool,
                obs,
                &binding.object,
                binding.part.as_deref(),
                opts,
                seed,
            );
        }
        let target = if binding.requirement == RepresentationKind::TopoOrder {
            let ids = if binding.group.is_empty() {
                vec![binding.object.clone()]
            } else {
                binding.group.clone()
            };
            Target::Group { ids }
        } else {
            match &binding.part {
                Some(p) => Target::part(&binding.object, p),
                None => Target::object(&binding.object),
            }
        };
        extract_with(&tool, obs, &target, opts, seed)
    }

    /// Blocking extraction with retries. Each attempt sees a fresh observation
    /// and advances the clock by the tool's latency.
    pub fn extract(
        &mut self,
        stage: usize,
        plan: &StagePlan,
        binding: &Binding,
    ) -> Result<BoundValue, ExecFailure> {
        let key = binding.key();
        let Some(sel) = plan.selection(&key).cloned() else {
            return Err(self.fail(
                stage,
                Module::Toolkit,
                "extract",
                format!("no tool selected for {key}"),
            ));
        };
        let opts = ExtractOptions {
            stage,
            requirement: Some(binding.requirement),
            exact: self.cfg.noise_scale == 0.0,
            padding: Padding::Adaptive,
        };
        for attempt in 1..=self.cfg.extraction_attempts {
            let n = self.extractions;
            self.extractions += 1;
            let obs = observe(
                &self.scene,
                &self.cfg.rest_occlusion,
                rng::derive(self.cfg.seed, "rest", &[n]),
            );
            let rec = match self.run_extractor(
                &sel,
                binding,
                &obs,
                &opts,
                rng::derive(self.cfg.seed, "extract", &[n]),
            ) {
                Ok(r) => r,
                Err(e) => {
                    return Err(self.fail(stage, Module::Toolkit, "extract", format!("{key}: {e}")))
                }
            };
            self.scene.advance_clock(rec.elapsed_s);
            self.extraction_time_s += rec.elapsed_s;
            self.audit.push(rec.clone());
            let Some(value) = rec.value else {
                let why = if rec.occluded { "occluded" } else { "missed" };
                self.note(
                    stage,
                    Module::Toolkit,
                    "extract_retry",
                    true,
                    format!("{key} via {}: attempt {attempt} {why}", sel.tool),
                );
                continue;
            };
            let truth_opts = ExtractOptions {
                exact: true,
                ..opts
            };
            let truth = self
                .run_extractor(
                    &sel,
                    binding,
                    &Observation::clear(&obs.snapshot),
                    &truth_opts,
                    0,
                )
                .ok()
                .and_then(|r| r.value);
            let (dp, da) = truth
                .as_ref()
                .map(|t| value_error(&value, t))
                .unwrap_or((0.0, 0.0));
            let accurate = dp <= self.cfg.accuracy.position_m && da <= self.cfg.accuracy.angle_rad;
            self.note(
                stage,
                Module::Toolkit,
                "extract",
                accurate,
                format!("{key} via {}: error {dp:.4} m, {da:.4} rad", sel.tool),
            );
            return Ok(if self.scene.is_carried(&binding.object) {
                BoundValue::carried(value, self.scene.ee_pose)
            } else {
                BoundValue::fixed(value)
            });
        }
        Err(self.fail(
            stage,
            Module::Toolkit,
            "extract",
            format!(
                "{key} via {}: failed after {} attempts",
                sel.tool, self.cfg.extraction_attempts
            ),
        ))
    }

    /// Traverse height clearing every object not held.
    fn safe_z(&self) -> f64 {
        let s = &self.scene;
        let carried = s.attached_id().filter(|id| s.is_carried(id));
        let top = s
            .objects
            .iter()
            .filter(|o| Some(o.id.as_str()) != carried)
            .map(|o| o.aabb().max.z)
            .fold(s.table_z(), f64::max);
        let hang = carried
            .and_then(|id| s.object(id))
            .map(|o| (s.ee_pose.translation.z - o.aabb().min.z).max(0.0))
            .unwrap_or(0.0);
        (top + self.cfg.margin + hang + self.cfg.clearance).min(s.workspace.max.z - 1e-6)
    }

    /// Extracts, solves and executes the listed constraints.
    pub fn solve_step(
        &mut self,
        plan: &StagePlan,
        ids: &[String],
        gripper_end: Gripper,
        motion: MotionStyle,
    ) -> Result<Trajectory, ExecFailure> {
        let stage = plan.stage;
        let mut fns: Vec<&ConstraintFn> = Vec::new();
        for id in ids {
            match plan.function(id) {
                Some(f) => fns.push(f),
                None => {
                    return Err(self.fail(
                        stage,
                        Module::Planner,
                        "solve",
                        format!("unknown constraint `{id}`"),
                    ))
                }
            }
        }
        let mut cache: BTreeMap<BindingKey, BoundValue> = BTreeMap::new();
        let mut ctx = EvalContext::new();
        let mut targets: BTreeSet<String> = BTreeSet::new();
        for f in &fns {
            for (name, b) in &f.bindings {
                let key = b.key();
                if !cache.contains_key(&key) {
                    let v = self.extract(stage, plan, b)?;
                    cache.insert(key.clone(), v);
                }
                ctx.bind(name.clone(), cache[&key].clone());
                targets.insert(b.object.clone());
                targets.extend(b.group.iter().cloned());
            }
        }
        // Bodies the gripper starts inside (one just released) are left straight up.
        let carried = self.scene.attached_id().map(str::to_string);
        let start = self.scene.ee_pose.translation;
        let obstacles = self
            .scene
            .objects
            .iter()
            .filter(|o| !targets.contains(&o.id) && carried.as_deref() != Some(o.id.as_str()))
            .filter(|o| o.body().distance_to(&start) >= self.cfg.margin)
            .map(|o| (o.id.clone(), o.body()))
            .collect();
        let problem = SolveProblem {
            stage,
            subgoals: fns
                .iter()
                .copied()
                .filter(|f| f.kind == ConstraintKind::Subgoal)
                .collect(),
            paths: fns
                .iter()
                .copied()
                .filter(|f| f.kind == ConstraintKind::Path)
                .collect(),
            ctx: &ctx,
            start: self.scene.ee_pose,
            workspace: self.scene.workspace,
            obstacles,
            margin: self.cfg.margin,
            waypoints: self.cfg.waypoints,
            motion,
            safe_z: Some(self.safe_z()),
            gripper_end,
        };
        let m = self.motions;
        let solver = SolverConfig {
            seed: rng::derive(self.cfg.seed, "solve", &[m]),
            ..self.cfg.solver.clone()
        };
        let sol = match solve_stage(&problem, &solver) {
            Ok(s) => s,
            Err(e) => {
                return Err(self.fail(
                    stage,
                    Module::Planner,
                    "solve",
                    format!("{}: {e}", ids.join(", ")),
                ))
            }
        };
        self.note(
            stage,
            Module::Planner,
            "solve",
            sol.converged,
            format!(
                "{}: terminal cost {:.3e}{}",
                ids.join(", "),
                sol.terminal_cost,
                if sol.converged { "" } else { " (unconverged)" }
            ),
        );
        let tracked: Vec<String> = targets.into_iter().collect();
        self.execute(stage, &sol.trajectory, &tracked)?;
        Ok(sol.trajectory)
    }

    /// Applies a trajectory to the scene while tracking `tracked`.
    pub fn execute(
        &mut self,
        stage: usize,
        traj: &Trajectory,
        tracked: &[String],
    ) -> Result<(), ExecFailure> {
        let m = self.motions;
        self.motions += 1;
        let (next, timeline) = match scene_step_with_timeline(&self.scene, traj) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(stage, Module::Planner, "execute", e.to_string())),
        };
        if self.cfg.track.tracks(stage) && !tracked.is_empty() {
            let report = track(
                &self.cfg.track,
                &self.scene,
                &timeline,
                next.clock,
                tracked,
                &self.cfg.motion_occlusion,
                rng::derive(self.cfg.seed, "track", &[m]),
            );
            self.track_ticks += report.tick_times().len();
            if let (Some(t), Some(obj)) = (report.stale_at, &report.stale_object) {
                let at = timeline
                    .iter()
                    .take_while(|s| s.clock <= t + 1e-9)
                    .last()
                    .cloned()
                    .unwrap_or_else(|| self.scene.clone());
                self.scene = at;
                self.scene.clock = t;
                return Err(self.fail(
                    stage,
                    Module::Tracking,
                    "stale",
                    format!("representation of `{obj}` stale at t = {t:.3} s"),
                ));
            }
            self.scene = next;
            let n = report.tick_times().len();
            self.note(
                stage,
                Module::Tracking,
                "track",
                true,
                format!("{n} re-extractions"),
            );
        } else {
            self.scene = next;
        }
        Ok(())
    }

    /// Runs one stage: conventional stages solve all their constraints at
    /// once, others run their program.
    pub fn run_stage(
        &mut self,
        plan: &StagePlan,
    ) -> Result<(Option<Trajectory>, Flow), ExecFailure> {
        match &plan.program {
            Some(prog) => self.run_stage_program(plan, prog),
            None => {
                let ids = StageProgram::default_solve_set(&plan.functions);
                self.solve_step(plan, &ids, plan.gripper_end, plan.motion)
                    .map(|t| (Some(t), Flow::Continue))
            }
        }
    }

    /// Interprets a stage program and returns the concatenated motion.
    pub fn run_stage_program(
        &mut self,
        plan: &StagePlan,
        prog: &StageProgram,
    ) -> Result<(Option<Trajectory>, Flow), ExecFailure> {
        let stage = plan.stage;
        if let Err(e) = prog.validate(&plan.functions) {
            return Err(self.fail(stage, Module::Planner, "program", e.to_string()));
        }
        let bindings = match stage_bindings(&plan.functions) {
            Ok(b) => b,
            Err(e) => return Err(self.fail(stage, Module::Planner, "program", e.to_string())),
        };
        let mut steps = prog.steps.clone();
        let mut traj: Option<Trajectory> = None;
        let push = |traj: &mut Option<Trajectory>, t: Trajectory| match traj {
            Some(acc) => acc.extend(&t),
            None => *traj = Some(t),
        };
        let mut i = 0;
        while i < steps.len() {
            match steps[i].clone() {
                Step::Solve {
                    constraints,
                    gripper_end,
                    motion,
                    ..
                } => {
                    let ids = if constraints.is_empty() {
                        StageProgram::default_solve_set(&plan.functions)
                    } else {
                        constraints
                    };
                    let t = self.solve_step(plan, &ids, gripper_end, motion)?;
                    push(&mut traj, t);
                    i += 1;
                }
                Step::QueryState { binding, branches } => {
                    let b = bindings[&binding].clone();
                    let state = match self.extract(stage, plan, &b)?.value {
                        RepresentationValue::StateMachine { state, .. } => state,
                        other => {
                            return Err(self.fail(
                                stage,
                                Module::Toolkit,
                                "query_state",
                                format!("`{binding}` yielded a {} value", other.kind()),
                            ))
                        }
                    };
                    let Some(branch) = branches.get(&state).copied() else {
                        return Err(self.fail(
                            stage,
                            Module::Planner,
                            "query_state",
                            format!("no branch for state `{state}` of `{binding}`"),
                        ));
                    };
                    self.note(
                        stage,
                        Module::Planner,
                        "query_state",
                        true,
                        format!("{binding} = {state}"),
                    );
                    match branch {
                        Branch::Next => i += 1,
                        Branch::Goto(k) => i = k,
                        Branch::EndStage => break,
                        Branch::EndTask => return Ok((traj, Flow::EndTask)),
                    }
                }
                Step::ReorderBy { binding } => {
                    let b = bindings[&binding].clone();
                    let order = match self.extract(stage, plan, &b)?.value {
                        RepresentationValue::TopoOrder { order } => order,
                        other => {
                            return Err(self.fail(
                                stage,
                                Module::Toolkit,
                                "reorder_by",
                                format!("`{binding}` yielded a {} value", other.kind()),
                            ))
                        }
                    };
                    self.note(
                        stage,
                        Module::Planner,
                        "reorder_by",
                        true,
                        order.join(" > "),
                    );
                    reorder_steps(&mut steps, i + 1, &order);
                    i += 1;
                }
                Step::Gripper { command } => {
                    let t = Trajectory::new(
                        stage,
                        vec![Waypoint {
                            pose: self.scene.ee_pose,
                            gripper: command,
                        }],
                    )
                    .expect("one waypoint");
                    self.execute(stage, &t, &[])?;
                    push(&mut traj, t);
                    i += 1;
                }
            }
        }
        Ok((traj, Flow::Continue))
    }

    pub fn finish(self, trajectories: Vec<Trajectory>, failure: Option<ExecFailure>) -> Execution {
        Execution {
            trajectories,
            scene: self.scene,
            log: self.log,
            audit: self.audit,
            extraction_time_s: self.extraction_time_s,
            track_ticks: self.track_ticks,
            failure,
        }
    }
}

/// Position and angle error between an extracted value and ground truth.
pub fn value_error(v: &RepresentationValue, truth: &RepresentationValue) -> (f64, f64) {
    let dp = match (v.point(), truth.point()) {
        (Some(a), Some(b)) => a.distance(&b),
        _ => 0.0,
    };
    let da = match (v, truth) {
        (
            RepresentationValue::Vector { direction: a, .. },
            RepresentationValue::Vector { direction: b, .. },
        ) => a.angle_to(b),
        _ => match (v.pose(), truth.pose()) {
            (Some(a), Some(b)) => a.rotation.geodesic(&b.rotation),
            _ => 0.0,
        },
    };
    let mismatch = match (v, truth) {
        (
            RepresentationValue::StateMachine { state: a, .. },
            RepresentationValue::StateMachine { state: b, .. },
        ) => a != b,
        (
            RepresentationValue::TopoOrder { order: a },
            RepresentationValue::TopoOrder { order: b },
        ) => a != b,
        _ => false,
    };
    if mismatch {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (dp, da)
    }
}

/// Executes every stage in order. A failing stage stops the run; the
/// returned execution keeps its log and partial trajectories.
pub fn generate_action_sequence(
    plans: &[StagePlan],
    scene: &SceneState,
    reg: &Registry,
    cfg: &ExecConfig,
) -> Execution {
    let mut ex = Executor::new(reg, cfg, scene.clone());
    if let Err(e) = cfg.validate() {
        let f = ex.fail(0, Module::Planner, "config", e.to_string());
        return ex.finish(Vec::new(), Some(f));
    }
    let mut out = Vec::new();
    for plan in plans {
        match ex.run_stage(plan) {
            Ok((traj, flow)) => {
                out.extend(traj);
                if flow == Flow::EndTask {
                    break;
                }
            }
            Err(f) => return ex.finish(out, Some(f)),
        }
    }
    ex.finish(out, None)
}
