//! Browser bindings: run a trial on a shipped task, rank extractors for a
//! requirement, and evaluate a constraint expression against a scene.
//!
//! Every export takes plain arguments and returns a JSON string; failures
//! come back as `{"error": "..."}`.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use taskrep_core::cog::TaskScript;
use taskrep_core::dsl::{eval_expr, parse_constraint, BoundValue, EvalContext};
use taskrep_core::geometry::{Gripper, Pose};
use taskrep_core::harness::{AblationMode, PreparedTask, Profile, TrialConfig};
use taskrep_core::scene::{scene_from_str, SceneObject, SceneState};
use taskrep_core::toolkit::{
    registry_from_str, select_tool, Registry, RepresentationKind, RepresentationValue,
};
use wasm_bindgen::prelude::wasm_bindgen;

const REGISTRY: &str = include_str!("../../core/fixtures/registry.json");

const TASKS: [(&str, &str, &str); 5] = [
    (
        "pick_place",
        include_str!("../../core/fixtures/tasks/pick_place.json"),
        include_str!("../../core/fixtures/scenes/pick_place.json"),
    ),
    (
        "plush",
        include_str!("../../core/fixtures/tasks/plush.json"),
        include_str!("../../core/fixtures/scenes/plush.json"),
    ),
    (
        "tool_insert",
        include_str!("../../core/fixtures/tasks/tool_insert.json"),
        include_str!("../../core/fixtures/scenes/tool_insert.json"),
    ),
    (
        "drawer",
        include_str!("../../core/fixtures/tasks/drawer.json"),
        include_str!("../../core/fixtures/scenes/drawer.json"),
    ),
    (
        "stack",
        include_str!("../../core/fixtures/tasks/stack.json"),
        include_str!("../../core/fixtures/scenes/stack.json"),
    ),
];

fn respond(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn registry() -> Result<Registry, String> {
    registry_from_str(REGISTRY, "registry.json").map_err(|e| e.to_string())
}

fn task_files(name: &str) -> Result<(TaskScript, SceneState), String> {
    let (_, script, scene) = TASKS
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| format!("unknown task `{name}`"))?;
    let script = TaskScript::from_str(script, name).map_err(|e| e.to_string())?;
    let scene = scene_from_str(scene, name).map_err(|e| e.to_string())?;
    Ok((script, scene))
}

fn prepared(task: &str, mode: &str, profile: &str) -> Result<PreparedTask, String> {
    let (script, scene) = task_files(task)?;
    let cfg = TrialConfig {
        mode: mode.parse::<AblationMode>()?,
        profile: Profile::named(profile).ok_or_else(|| format!("unknown profile `{profile}`"))?,
        ..TrialConfig::new(task, "registry.json")
    };
    PreparedTask::from_parts(script, scene, registry()?, &cfg).map_err(|e| e.to_string())
}

fn yaw(p: &Pose) -> f64 {
    let x = p.rotation.axis(0);
    x.y.atan2(x.x)
}

fn object_json(o: &SceneObject) -> Value {
    let t = o.pose.translation;
    json!({
        "id": o.id,
        "class": o.class,
        "x": t.x,
        "y": t.y,
        "z": t.z,
        "yaw": yaw(&o.pose),
        "hx": o.extent[0],
        "hy": o.extent[1],
        "fixed": o.fixed,
        "state": o.current_state(),
    })
}

fn scene_json(s: &SceneState) -> Value {
    json!({
        "workspace": [s.workspace.min.x, s.workspace.min.y, s.workspace.max.x, s.workspace.max.y],
        "ee": [s.ee_pose.translation.x, s.ee_pose.translation.y, s.ee_pose.translation.z],
        "objects": s.objects.iter().map(object_json).collect::<Vec<_>>(),
    })
}

/// Names of the tasks bundled with the demo.
#[wasm_bindgen]
pub fn task_names() -> String {
    json!(TASKS.iter().map(|(n, _, _)| *n).collect::<Vec<_>>()).to_string()
}

/// Instruction text and initial scene of a task.
#[wasm_bindgen]
pub fn describe_task(task: &str) -> String {
    respond(task_files(task).map(|(script, scene)| {
        json!({
            "name": script.name,
            "instruction": script.instruction,
            "scene": scene_json(&scene),
        })
    }))
}

/// Runs one seed and returns the result, the log, both scenes and the
/// end-effector path as `[x, y, z, closed]` rows.
#[wasm_bindgen]
pub fn run_trial(task: &str, mode: &str, profile: &str, seed: u32) -> String {
    respond((|| {
        let t = prepared(task, mode, profile)?;
        let run = t.run_detailed(u64::from(seed)).map_err(|e| e.to_string())?;
        let (path, final_scene) = match &run.execution {
            Some(ex) => {
                let path: Vec<Value> = ex
                    .trajectories
                    .iter()
                    .flat_map(|traj| traj.waypoints())
                    .map(|w| {
                        let p = w.pose.translation;
                        json!([p.x, p.y, p.z, w.gripper != Gripper::Open])
                    })
                    .collect();
                (path, scene_json(&ex.scene))
            }
            None => (Vec::new(), scene_json(&run.initial)),
        };
        Ok(json!({
            "result": run.result,
            "initial": scene_json(&run.initial),
            "final": final_scene,
            "path": path,
        }))
    })())
}

/// Utility table for one requirement on one object class, best tool first
/// marked by `selected`.
#[wasm_bindgen]
pub fn rank_tools(class: &str, requirement: &str, mode: &str) -> String {
    respond((|| {
        let kind: RepresentationKind = serde_json::from_value(json!(requirement))
            .map_err(|_| format!("unknown requirement `{requirement}`"))?;
        let full = registry()?;
        let reg = match mode.parse::<AblationMode>()?.fixed() {
            None => full.clone(),
            Some(_) => {
                let t = prepared("pick_place", mode, "none")?;
                t.registry
            }
        };
        let p: BTreeMap<String, f64> = full
            .tools
            .iter()
            .filter_map(|t| t.capability(class, kind).map(|p| (t.name.clone(), p)))
            .collect();
        let sel = select_tool(&reg, kind, &p).map_err(|e| e.to_string())?;
        Ok(json!({
            "lambda": reg.lambda,
            "selected": sel.tool.name,
            "table": sel.table,
        }))
    })())
}

/// Evaluates `expr` on the randomized scene for `seed`. Every object is bound
/// as `rep("<id>")` to its true pose and `ee_pos` is the current gripper
/// position.
#[wasm_bindgen]
pub fn eval_expression(task: &str, seed: u32, expr: &str) -> String {
    respond((|| {
        let t = prepared(task, "full", "none")?;
        let scene = t
            .randomized_scene(u64::from(seed))
            .map_err(|e| e.to_string())?;
        let kinds: BTreeMap<String, RepresentationKind> = scene
            .objects
            .iter()
            .map(|o| (o.id.clone(), RepresentationKind::Pose))
            .collect();
        let parsed = parse_constraint(expr, &kinds).map_err(|e| e.to_string())?;
        let mut ctx = EvalContext::new();
        for o in &scene.objects {
            ctx.bind(
                o.id.clone(),
                BoundValue::fixed(RepresentationValue::Pose { pose: o.pose }),
            );
        }
        let value = eval_expr(&parsed, &ctx, &scene.ee_pose).map_err(|e| e.to_string())?;
        Ok(json!({ "value": value, "scene": scene_json(&scene) }))
    })())
}
