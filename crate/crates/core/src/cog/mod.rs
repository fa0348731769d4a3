//! Four-phase instruction grounding: stage decomposition into hints,
//! constraint inference, tool selection and constraint emission, over a
//! pluggable backend.

pub mod remote;
pub mod schema;
mod script;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dsl::{
    validate_bindings, Binding, BindingKey, ConstraintFn, Diagnostic, DslError, Selection,
};
use crate::geometry::Gripper;
use crate::planner::{MotionStyle, StageProgram};
use crate::scene::Observation;
use crate::toolkit::{select_tool, Granularity, Registry, RepresentationKind, ToolkitError};

use schema::{
    parse_response, ConstraintsResponse, DecomposeResponse, EmitResponse, EstimatesResponse,
    ProgramItem, SingleShotResponse, PHASE_SCHEMA,
};
pub use script::{
    OracleBackend, PSuccSource, ScriptConstraint, ScriptError, ScriptHint, ScriptStage, TaskScript,
};

/// Words a hint must not contain: hints stay representation-agnostic.
pub const BANNED_HINT_TOKENS: [&str; 9] = [
    "point",
    "points",
    "vector",
    "vectors",
    "pose",
    "poses",
    "6d",
    "keypoint",
    "keypoints",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Decompose,
    Constraints,
    Estimate,
    Emit,
    /// All four phases in one request.
    SingleShot,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Decompose => "decompose",
            Phase::Constraints => "constraints",
            Phase::Estimate => "estimate",
            Phase::Emit => "emit",
            Phase::SingleShot => "single_shot",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
}

impl BackendError {
    pub fn new(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
        }
    }
}

/// Source of phase responses. Must not touch scene state and must be
/// callable from several threads.
pub trait GroundingBackend: Send + Sync {
    fn call(&self, phase: Phase, payload: &Value) -> Result<Value, BackendError>;
}

impl<T: GroundingBackend + ?Sized> GroundingBackend for &T {
    fn call(&self, phase: Phase, payload: &Value) -> Result<Value, BackendError> {
        (**self).call(phase, payload)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
}

impl Instruction {
    pub fn new(text: impl Into<String>) -> Self {
        Instruction { text: text.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hint {
    pub stage: usize,
    /// 1-based within the stage.
    pub index: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlConstraint {
    pub stage: usize,
    pub hint: usize,
    pub index: usize,
    pub id: String,
    pub text: String,
    pub objects: Vec<Binding>,
}

/// Grounding output for one stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StagePlan {
    pub stage: usize,
    pub hints: Vec<Hint>,
    pub constraints: Vec<NlConstraint>,
    /// Every representation request made by the stage's constraints.
    pub objects: Vec<BindingKey>,
    pub selections: Vec<Selection>,
    pub functions: Vec<ConstraintFn>,
    /// Estimated success probability, by binding key then tool.
    pub p_succ: BTreeMap<String, BTreeMap<String, f64>>,
    pub gripper_end: Gripper,
    pub motion: MotionStyle,
    pub program: Option<StageProgram>,
}

impl StagePlan {
    pub fn selection(&self, key: &BindingKey) -> Option<&Selection> {
        self.selections.iter().find(|s| &s.key == key)
    }

    pub fn function(&self, id: &str) -> Option<&ConstraintFn> {
        self.functions.iter().find(|f| f.id == id)
    }

    /// True when every binding is a kind the solver consumes directly.
    pub fn is_conventional(&self) -> bool {
        self.functions
            .iter()
            .flat_map(|f| f.bindings.values())
            .all(|b| b.requirement.is_conventional())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error("empty instruction")]
    EmptyInstruction,
    #[error("{phase}: backend failed: {message}")]
    Backend { phase: Phase, message: String },
    #[error("{phase}: response violates schema: {message}")]
    Schema { phase: Phase, message: String },
    #[error("{phase}: {message}")]
    Invalid { phase: Phase, message: String },
    #[error("stage {stage}: no tool for {key}: {source}")]
    Select {
        stage: usize,
        key: String,
        source: ToolkitError,
    },
    #[error("stage {stage}: constraint `{constraint}`: {source}")]
    Emit {
        stage: usize,
        constraint: String,
        source: DslError,
    },
    #[error("stage {stage}: binding diagnostics: {}", .diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Bindings {
        stage: usize,
        diagnostics: Vec<Diagnostic>,
    },
}

impl GroundError {
    pub fn phase(&self) -> Option<Phase> {
        match self {
            GroundError::EmptyInstruction => None,
            GroundError::Backend { phase, .. }
            | GroundError::Schema { phase, .. }
            | GroundError::Invalid { phase, .. } => Some(*phase),
            GroundError::Select { .. } => Some(Phase::Estimate),
            GroundError::Emit { .. } | GroundError::Bindings { .. } => Some(Phase::Emit),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundOptions {
    /// One combined request instead of four dependent ones.
    pub single_shot: bool,
    /// When the registry has no compatible tool, impose its first tool
    /// instead of failing (fixed-extractor ablations).
    pub force_fixed: bool,
    pub seed: u64,
}

fn invalid(phase: Phase, message: impl Into<String>) -> GroundError {
    GroundError::Invalid {
        phase,
        message: message.into(),
    }
}

/// Scene summary shared by every phase payload.
pub fn context_payload(instruction: &Instruction, obs: &Observation, seed: u64) -> Value {
    let objects: Vec<Value> = obs
        .snapshot
        .objects
        .iter()
        .map(|o| {
            json!({
                "id": o.id,
                "label": o.label,
                "class": o.class,
                "parts": o.parts.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
                "has_states": o.states.is_some(),
            })
        })
        .collect();
    json!({
        "schema": PHASE_SCHEMA,
        "instruction": instruction.text,
        "objects": objects,
        "seed": seed,
    })
}

fn registry_payload(reg: &Registry) -> Value {
    Value::Array(
        reg.tools
            .iter()
            .map(|t| {
                json!({
                    "name": t.name,
                    "inputs": t.inputs,
                    "output": t.output,
                    "format": t.format,
                    "summary": t.summary,
                    "avg_time_s": t.avg_time_s,
                })
            })
            .collect(),
    )
}

fn with(mut base: Value, key: &str, v: Value) -> Value {
    base.as_object_mut()
        .expect("object payload")
        .insert(key.into(), v);
    base
}

fn call<T: serde::de::DeserializeOwned>(
    backend: &dyn GroundingBackend,
    phase: Phase,
    payload: &Value,
) -> Result<T, GroundError> {
    let v = backend
        .call(phase, payload)
        .map_err(|e| GroundError::Backend {
            phase,
            message: e.message,
        })?;
    parse_response(&v).map_err(|message| GroundError::Schema { phase, message })
}

fn banned_token(text: &str) -> Option<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .find(|w| BANNED_HINT_TOKENS.contains(&w.as_str()))
}

/// Validates a decomposition: stages 1..S in order, at least one hint each,
/// and no representation words in any hint.
pub fn check_decompose(r: &DecomposeResponse) -> Result<Vec<Vec<Hint>>, GroundError> {
    let p = Phase::Decompose;
    if r.stages.is_empty() {
        return Err(invalid(p, "no stages"));
    }
    let mut out = Vec::new();
    for (i, st) in r.stages.iter().enumerate() {
        if st.stage != i + 1 {
            let numbers: Vec<String> = r.stages.iter().map(|s| s.stage.to_string()).collect();
            return Err(invalid(
                p,
                format!(
                    "stages must be numbered 1..{} in order, got {{{}}}",
                    r.stages.len(),
                    numbers.join(", ")
                ),
            ));
        }
        if st.hints.is_empty() {
            return Err(invalid(p, format!("stage {} has no hints", st.stage)));
        }
        let mut hints = Vec::new();
        for (j, text) in st.hints.iter().enumerate() {
            if text.trim().is_empty() {
                return Err(invalid(
                    p,
                    format!("stage {} hint {} is empty", st.stage, j + 1),
                ));
            }
            if let Some(w) = banned_token(text) {
                return Err(invalid(
                    p,
                    format!(
                        "stage {} hint {} names a representation (`{w}`)",
                        st.stage,
                        j + 1
                    ),
                ));
            }
            hints.push(Hint {
                stage: st.stage,
                index: j + 1,
                text: text.clone(),
            });
        }
        out.push(hints);
    }
    Ok(out)
}

/// Validates inferred constraints against the hints and the observed scene.
pub fn check_constraints(
    r: &ConstraintsResponse,
    hints: &[Vec<Hint>],
    obs: &Observation,
) -> Result<Vec<Vec<NlConstraint>>, GroundError> {
    let p = Phase::Constraints;
    let mut out: Vec<Vec<NlConstraint>> = vec![Vec::new(); hints.len()];
    let mut ids = BTreeSet::new();
    for c in &r.constraints {
        if c.stage == 0 || c.stage > hints.len() {
            return Err(invalid(
                p,
                format!("constraint `{}` names unknown stage {}", c.id, c.stage),
            ));
        }
        if c.hint == 0 || c.hint > hints[c.stage - 1].len() {
            return Err(invalid(
                p,
                format!(
                    "constraint `{}` names unknown hint {} of stage {}",
                    c.id, c.hint, c.stage
                ),
            ));
        }
        if c.id.is_empty() || !ids.insert(c.id.clone()) {
            return Err(invalid(
                p,
                format!("constraint id `{}` is empty or repeated", c.id),
            ));
        }
        if c.objects.is_empty() {
            return Err(invalid(
                p,
                format!("constraint `{}` involves no objects", c.id),
            ));
        }
        let objects: Vec<Binding> = c.objects.iter().map(Binding::from).collect();
        for b in &objects {
            script::check_binding(&obs.snapshot, &c.id, b).map_err(|m| invalid(p, m))?;
        }
        out[c.stage - 1].push(NlConstraint {
            stage: c.stage,
            hint: c.hint,
            index: c.index,
            id: c.id.clone(),
            text: c.text.clone(),
            objects,
        });
    }
    for (s, stage_hints) in hints.iter().enumerate() {
        for h in stage_hints {
            if !out[s].iter().any(|c| c.hint == h.index) {
                return Err(invalid(
                    p,
                    format!("stage {} hint {} yields no constraints", h.stage, h.index),
                ));
            }
        }
    }
    Ok(out)
}

/// O_s: distinct binding keys of a stage, in first-use order.
pub fn stage_objects(constraints: &[NlConstraint]) -> Vec<(BindingKey, Vec<String>)> {
    let mut out: Vec<(BindingKey, Vec<String>)> = Vec::new();
    for c in constraints {
        for b in &c.objects {
            let key = b.key();
            if !out.iter().any(|(k, _)| *k == key) {
                out.push((key, b.group.clone()));
            }
        }
    }
    out
}

/// Success estimates keyed by (stage, binding key display) then tool.
pub type PSuccTable = BTreeMap<(usize, String), BTreeMap<String, f64>>;

pub fn check_estimates(r: &EstimatesResponse) -> Result<PSuccTable, GroundError> {
    let mut out = PSuccTable::new();
    for e in &r.estimates {
        if !(0.0..=1.0).contains(&e.p) {
            return Err(invalid(
                Phase::Estimate,
                format!(
                    "estimate for `{}` on {} is {} (outside [0, 1])",
                    e.tool, e.object, e.p
                ),
            ));
        }
        let key = BindingKey {
            object: e.object.clone(),
            part: e.part.clone(),
            requirement: e.requirement,
            granularity: e.granularity,
        };
        out.entry((e.stage, key.to_string()))
            .or_default()
            .insert(e.tool.clone(), e.p);
    }
    Ok(out)
}

/// Selects one tool per (stage, binding key) by utility.
pub fn select_tools(
    reg: &Registry,
    stage: usize,
    objects: &[(BindingKey, Vec<String>)],
    p_succ: &PSuccTable,
    force_fixed: bool,
) -> Result<Vec<Selection>, GroundError> {
    let empty = BTreeMap::new();
    let mut out = Vec::new();
    for (key, group) in objects {
        let table = p_succ.get(&(stage, key.to_string())).unwrap_or(&empty);
        let crop_tool = match key.granularity {
            Granularity::Fine => reg.crop_tool().map(|t| t.name.clone()),
            Granularity::Coarse => None,
        };
        match select_tool(reg, key.requirement, table) {
            Ok(sel) => out.push(Selection {
                key: key.clone(),
                tool: sel.tool.name.clone(),
                output: sel.tool.output,
                crop_tool,
                group: group.clone(),
                table: sel.table,
                forced: false,
            }),
            Err(_) if force_fixed && !reg.tools.is_empty() => {
                let t = &reg.tools[0];
                out.push(Selection {
                    key: key.clone(),
                    tool: t.name.clone(),
                    output: t.output,
                    crop_tool,
                    group: group.clone(),
                    table: Vec::new(),
                    forced: true,
                });
            }
            Err(source) => {
                return Err(GroundError::Select {
                    stage,
                    key: key.to_string(),
                    source,
                })
            }
        }
    }
    Ok(out)
}

struct Emitted {
    functions: Vec<Vec<ConstraintFn>>,
    programs: Vec<ProgramItem>,
}

/// Compiles emitted functions and checks them against the constraint set:
/// one function per constraint, bindings drawn from that constraint's
/// objects, every stage object bound somewhere, valid stage programs.
fn check_emit(r: &EmitResponse, constraints: &[Vec<NlConstraint>]) -> Result<Emitted, GroundError> {
    let p = Phase::Emit;
    let stages = constraints.len();
    let mut functions: Vec<Vec<ConstraintFn>> = vec![Vec::new(); stages];
    for f in &r.functions {
        if f.stage == 0 || f.stage > stages {
            return Err(invalid(
                p,
                format!("function `{}` names unknown stage {}", f.id, f.stage),
            ));
        }
        let Some(nl) = constraints[f.stage - 1].iter().find(|c| c.id == f.id) else {
            return Err(invalid(
                p,
                format!(
                    "function `{}` matches no constraint of stage {}",
                    f.id, f.stage
                ),
            ));
        };
        if functions[f.stage - 1].iter().any(|g| g.id == f.id) {
            return Err(invalid(p, format!("constraint `{}` emitted twice", f.id)));
        }
        let mut bindings = BTreeMap::new();
        for b in &f.bindings {
            let binding = b.binding();
            if !nl.objects.iter().any(|o| o.key() == binding.key()) {
                return Err(invalid(
                    p,
                    format!(
                        "function `{}` binds {} which its constraint does not involve",
                        f.id,
                        binding.key()
                    ),
                ));
            }
            if bindings.insert(b.name.clone(), binding).is_some() {
                return Err(invalid(
                    p,
                    format!("function `{}` binds `{}` twice", f.id, b.name),
                ));
            }
        }
        let compiled = ConstraintFn::new(&f.id, f.stage, f.kind, &f.expr, bindings, &nl.text)
            .map_err(|source| GroundError::Emit {
                stage: f.stage,
                constraint: f.id.clone(),
                source,
            })?;
        functions[f.stage - 1].push(compiled);
    }
    for (s, cs) in constraints.iter().enumerate() {
        for c in cs {
            if !functions[s].iter().any(|f| f.id == c.id) {
                return Err(invalid(p, format!("constraint `{}` was not emitted", c.id)));
            }
        }
        let bound: BTreeSet<BindingKey> = functions[s]
            .iter()
            .flat_map(|f| f.bindings.values().map(|b| b.key()))
            .collect();
        for (key, _) in stage_objects(cs) {
            if !bound.contains(&key) {
                return Err(invalid(p, format!("stage {}: {key} is never bound", s + 1)));
            }
        }
    }
    let mut programs = Vec::new();
    for s in 1..=stages {
        let mut it = r.programs.iter().filter(|pr| pr.stage == s);
        let (Some(item), None) = (it.next(), it.next()) else {
            return Err(invalid(
                p,
                format!("stage {s} needs exactly one program entry"),
            ));
        };
        let fns = &functions[s - 1];
        match &item.program {
            Some(prog) => prog
                .validate(fns)
                .map_err(|e| invalid(p, format!("stage {s}: {e}")))?,
            None => {
                let conventional = fns
                    .iter()
                    .flat_map(|f| f.bindings.values())
                    .all(|b| b.requirement.is_conventional());
                if !conventional {
                    return Err(invalid(
                        p,
                        format!(
                            "stage {s} binds non-conventional representations but has no program"
                        ),
                    ));
                }
            }
        }
        programs.push(item.clone());
    }
    if r.programs.len() != stages {
        return Err(invalid(p, "program entries name unknown stages"));
    }
    Ok(Emitted {
        functions,
        programs,
    })
}

/// Tool selections for every stage, in stage order.
pub fn select_all(
    reg: &Registry,
    constraints: &[Vec<NlConstraint>],
    p_succ: &PSuccTable,
    force_fixed: bool,
) -> Result<Vec<Vec<Selection>>, GroundError> {
    constraints
        .iter()
        .enumerate()
        .map(|(s, cs)| select_tools(reg, s + 1, &stage_objects(cs), p_succ, force_fixed))
        .collect()
}

fn assemble(
    hints: Vec<Vec<Hint>>,
    constraints: Vec<Vec<NlConstraint>>,
    p_succ: &PSuccTable,
    selections: Vec<Vec<Selection>>,
    emitted: Emitted,
) -> Result<Vec<StagePlan>, GroundError> {
    let mut plans = Vec::new();
    let Emitted {
        functions,
        programs,
    } = emitted;
    for ((((hints, constraints), functions), program), selections) in hints
        .into_iter()
        .zip(constraints)
        .zip(functions)
        .zip(programs)
        .zip(selections)
    {
        let stage = program.stage;
        let objects = stage_objects(&constraints);
        let diagnostics: Vec<Diagnostic> = functions
            .iter()
            .flat_map(|f| validate_bindings(f, &selections))
            .collect();
        if !diagnostics.is_empty() {
            return Err(GroundError::Bindings { stage, diagnostics });
        }
        let p_table = objects
            .iter()
            .filter_map(|(k, _)| {
                p_succ
                    .get(&(stage, k.to_string()))
                    .map(|m| (k.to_string(), m.clone()))
            })
            .collect();
        plans.push(StagePlan {
            stage,
            hints,
            constraints,
            objects: objects.into_iter().map(|(k, _)| k).collect(),
            selections,
            functions,
            p_succ: p_table,
            gripper_end: program.gripper_end,
            motion: program.motion,
            program: program.program,
        });
    }
    Ok(plans)
}

fn constraints_payload(cs: &[Vec<NlConstraint>]) -> Value {
    serde_json::to_value(cs.iter().flatten().collect::<Vec<_>>()).expect("serializable")
}

/// Runs the grounding pipeline and returns one plan per stage.
///
/// Each phase sees only the scene context and earlier phases' outputs. In
/// single-shot mode one combined request replaces the four phases and its
/// parts are validated in the same order.
pub fn ground(
    backend: &dyn GroundingBackend,
    reg: &Registry,
    instruction: &Instruction,
    obs: &Observation,
    opts: &GroundOptions,
) -> Result<Vec<StagePlan>, GroundError> {
    if instruction.text.trim().is_empty() {
        return Err(GroundError::EmptyInstruction);
    }
    let ctx = context_payload(instruction, obs, opts.seed);
    if opts.single_shot {
        let payload = with(ctx, "tools", registry_payload(reg));
        let r: SingleShotResponse = call(backend, Phase::SingleShot, &payload)?;
        let hints = check_decompose(&r.decompose)?;
        let constraints = check_constraints(&r.constraints, &hints, obs)?;
        let p_succ = check_estimates(&r.estimates)?;
        let selections = select_all(reg, &constraints, &p_succ, opts.force_fixed)?;
        let emitted = check_emit(&r.emit, &constraints)?;
        return assemble(hints, constraints, &p_succ, selections, emitted);
    }

    let hints = decompose(backend, &ctx)?;
    let constraints = infer_constraints(backend, &ctx, &hints, obs)?;
    let p_succ = estimate(backend, &ctx, reg, &constraints)?;
    let selections = select_all(reg, &constraints, &p_succ, opts.force_fixed)?;
    let emitted = emit(backend, &ctx, &constraints, &selections)?;
    assemble(hints, constraints, &p_succ, selections, emitted)
}

/// Phase 1: stages and representation-agnostic hints.
pub fn decompose(
    backend: &dyn GroundingBackend,
    ctx: &Value,
) -> Result<Vec<Vec<Hint>>, GroundError> {
    let r: DecomposeResponse = call(backend, Phase::Decompose, ctx)?;
    check_decompose(&r)
}

/// Phase 2: natural-language constraints grounded in scene objects.
pub fn infer_constraints(
    backend: &dyn GroundingBackend,
    ctx: &Value,
    hints: &[Vec<Hint>],
    obs: &Observation,
) -> Result<Vec<Vec<NlConstraint>>, GroundError> {
    let payload = with(
        ctx.clone(),
        "hints",
        serde_json::to_value(hints).expect("serializable"),
    );
    let r: ConstraintsResponse = call(backend, Phase::Constraints, &payload)?;
    check_constraints(&r, hints, obs)
}

/// Phase 3 support: success estimates for every compatible tool.
pub fn estimate(
    backend: &dyn GroundingBackend,
    ctx: &Value,
    reg: &Registry,
    constraints: &[Vec<NlConstraint>],
) -> Result<PSuccTable, GroundError> {
    let mut requests = Vec::new();
    for (s, cs) in constraints.iter().enumerate() {
        for (key, _) in stage_objects(cs) {
            let tools: Vec<&str> = reg
                .tools
                .iter()
                .filter(|t| t.output.satisfies(key.requirement))
                .map(|t| t.name.as_str())
                .collect();
            requests.push(json!({
                "stage": s + 1,
                "object": key.object,
                "part": key.part,
                "requirement": key.requirement,
                "granularity": key.granularity,
                "tools": tools,
            }));
        }
    }
    let payload = with(
        with(ctx.clone(), "constraints", constraints_payload(constraints)),
        "requests",
        Value::Array(requests),
    );
    let payload = with(payload, "tools", registry_payload(reg));
    let r: EstimatesResponse = call(backend, Phase::Estimate, &payload)?;
    check_estimates(&r)
}

/// Phase 4: constraint expressions and stage programs.
fn emit(
    backend: &dyn GroundingBackend,
    ctx: &Value,
    constraints: &[Vec<NlConstraint>],
    selections: &[Vec<Selection>],
) -> Result<Emitted, GroundError> {
    let payload = with(ctx.clone(), "constraints", constraints_payload(constraints));
    let payload = with(
        payload,
        "selections",
        serde_json::to_value(selections).expect("serializable"),
    );
    let r: EmitResponse = call(backend, Phase::Emit, &payload)?;
    check_emit(&r, constraints)
}

/// Kinds every stage needs, for reporting.
pub fn required_kinds(plans: &[StagePlan]) -> BTreeSet<RepresentationKind> {
    plans
        .iter()
        .flat_map(|p| p.objects.iter().map(|k| k.requirement))
        .collect()
}
