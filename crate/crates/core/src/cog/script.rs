//! Deterministic task scripts and the oracle backend that replays them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::schema::{
    delete_field, field_paths, BindingItem, ConstraintItem, ConstraintsResponse, DecomposeResponse,
    EmitResponse, EstimateItem, EstimatesResponse, FunctionItem, ObjectItem, ProgramItem,
    SingleShotResponse, StageHints,
};
use super::{BackendError, GroundingBackend, Phase};
use crate::dsl::{Binding, ConstraintFn, ConstraintKind};
use crate::geometry::Gripper;
use crate::planner::{MotionStyle, StageProgram};
use crate::rng;
use crate::scene::{SceneState, SuccessPredicate};
use crate::toolkit::Registry;

pub const SCRIPT_SCHEMA: u32 = 1;

/// Where the oracle takes success probabilities from. Written as the string
/// `"capabilities"` or as a map from tool name to probability.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum PSuccSource {
    /// Look up (class, requirement) in each tool's capabilities.
    #[default]
    Capabilities,
    /// Fixed probability per tool name; missing tools score 0.
    Table(BTreeMap<String, f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PSuccRepr {
    Name(String),
    Table(BTreeMap<String, f64>),
}

impl Serialize for PSuccSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PSuccSource::Capabilities => PSuccRepr::Name("capabilities".into()).serialize(s),
            PSuccSource::Table(m) => PSuccRepr::Table(m.clone()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PSuccSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match PSuccRepr::deserialize(d)? {
            PSuccRepr::Name(n) if n == "capabilities" => Ok(PSuccSource::Capabilities),
            PSuccRepr::Name(n) => Err(serde::de::Error::custom(format!(
                "expected \"capabilities\" or a tool table, found {n:?}"
            ))),
            PSuccRepr::Table(m) => Ok(PSuccSource::Table(m)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskScript {
    pub schema: u32,
    pub name: String,
    pub instruction: String,
    /// Scene file, relative to the script.
    pub scene: String,
    pub success: SuccessPredicate,
    #[serde(default)]
    pub p_succ: PSuccSource,
    pub stages: Vec<ScriptStage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStage {
    pub stage: usize,
    pub hints: Vec<ScriptHint>,
    /// Gripper command appended after the stage's motion.
    pub gripper_end: Gripper,
    #[serde(default)]
    pub motion: MotionStyle,
    #[serde(default)]
    pub program: Option<StageProgram>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptHint {
    pub text: String,
    pub constraints: Vec<ScriptConstraint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptConstraint {
    pub id: String,
    pub text: String,
    #[serde(default = "subgoal")]
    pub kind: ConstraintKind,
    pub expr: String,
    pub bindings: BTreeMap<String, Binding>,
}

fn subgoal() -> ConstraintKind {
    ConstraintKind::Subgoal
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ScriptError {
    #[error("{path}:{line}:{column}: at `{field}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("task script: {0}")]
    Invalid(String),
}

impl TaskScript {
    pub fn from_str(text: &str, origin: &str) -> Result<TaskScript, ScriptError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let script: TaskScript = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ScriptError::Parse {
                path: origin.to_string(),
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        if script.schema != SCRIPT_SCHEMA {
            return Err(ScriptError::Invalid(format!(
                "unsupported schema {} (expected {SCRIPT_SCHEMA})",
                script.schema
            )));
        }
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TaskScript, ScriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_str(&text, &path.display().to_string())
    }

    /// Scene path resolved against the directory holding `script_path`.
    pub fn scene_path(&self, script_path: impl AsRef<Path>) -> PathBuf {
        match script_path.as_ref().parent() {
            Some(dir) => dir.join(&self.scene),
            None => PathBuf::from(&self.scene),
        }
    }

    /// Checks the script against a scene: contiguous stages, known objects and
    /// parts, expressions that parse, and well-formed stage programs.
    pub fn validate(&self, scene: &SceneState) -> Result<(), ScriptError> {
        let bad = |m: String| Err(ScriptError::Invalid(m));
        if self.instruction.trim().is_empty() {
            return bad("empty instruction".into());
        }
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.stage != i + 1 {
                return bad(format!(
                    "stage {} out of order; stages must run 1..{}",
                    st.stage,
                    self.stages.len()
                ));
            }
            if st.hints.is_empty() {
                return bad(format!("stage {} has no hints", st.stage));
            }
        }
        let mut ids = BTreeSet::new();
        for st in &self.stages {
            let mut fns = Vec::new();
            for h in &st.hints {
                if h.constraints.is_empty() {
                    return bad(format!(
                        "stage {}: hint {:?} has no constraints",
                        st.stage, h.text
                    ));
                }
                for c in &h.constraints {
                    if !ids.insert(c.id.clone()) {
                        return bad(format!("duplicate constraint id `{}`", c.id));
                    }
                    if c.bindings.is_empty() {
                        return bad(format!("constraint `{}` binds no objects", c.id));
                    }
                    for b in c.bindings.values() {
                        check_binding(scene, &c.id, b).map_err(ScriptError::Invalid)?;
                    }
                    let f = ConstraintFn::new(
                        &c.id,
                        st.stage,
                        c.kind,
                        &c.expr,
                        c.bindings.clone(),
                        &c.text,
                    )
                    .map_err(|e| ScriptError::Invalid(format!("constraint `{}`: {e}", c.id)))?;
                    fns.push(f);
                }
            }
            if let Some(p) = &st.program {
                p.validate(&fns)
                    .map_err(|e| ScriptError::Invalid(format!("stage {}: {e}", st.stage)))?;
            }
        }
        for id in self.success.objects() {
            if scene.object(id).is_none() {
                return bad(format!("success predicate names unknown object `{id}`"));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_binding(
    scene: &SceneState,
    constraint: &str,
    b: &Binding,
) -> Result<(), String> {
    let obj = scene.object(&b.object).ok_or_else(|| {
        format!(
            "constraint `{constraint}` references unknown object `{}`",
            b.object
        )
    })?;
    if let Some(p) = &b.part {
        if obj.part(p).is_none() {
            return Err(format!(
                "constraint `{constraint}` references unknown part `{p}` of `{}`",
                b.object
            ));
        }
    }
    for g in &b.group {
        if scene.object(g).is_none() {
            return Err(format!(
                "constraint `{constraint}` groups unknown object `{g}`"
            ));
        }
    }
    Ok(())
}

/// Replays a [`TaskScript`] as grounding-backend responses.
///
/// In single-shot mode it models the weaker unguided grounding: with
/// probability `single_shot_error_p` one required field is deleted from the
/// response, seeded by the payload's `seed`.
#[derive(Clone, Debug)]
pub struct OracleBackend {
    pub script: TaskScript,
    /// Full registry with capabilities, for success estimates.
    pub registry: Registry,
    /// Class of every scene object, for capability lookup.
    pub classes: BTreeMap<String, String>,
    pub single_shot_error_p: f64,
}

impl OracleBackend {
    pub fn new(script: TaskScript, registry: Registry, scene: &SceneState) -> Self {
        OracleBackend {
            script,
            registry,
            classes: scene
                .objects
                .iter()
                .map(|o| (o.id.clone(), o.class.clone()))
                .collect(),
            single_shot_error_p: 0.0,
        }
    }

    pub fn with_single_shot_error(mut self, p: f64) -> Self {
        self.single_shot_error_p = p;
        self
    }

    pub fn decompose(&self) -> DecomposeResponse {
        DecomposeResponse {
            stages: self
                .script
                .stages
                .iter()
                .map(|s| StageHints {
                    stage: s.stage,
                    hints: s.hints.iter().map(|h| h.text.clone()).collect(),
                })
                .collect(),
        }
    }

    pub fn constraints(&self) -> ConstraintsResponse {
        let mut out = Vec::new();
        for s in &self.script.stages {
            for (j, h) in s.hints.iter().enumerate() {
                for (k, c) in h.constraints.iter().enumerate() {
                    let mut objects: Vec<ObjectItem> = Vec::new();
                    for b in c.bindings.values() {
                        let item = ObjectItem::from(b);
                        if !objects.contains(&item) {
                            objects.push(item);
                        }
                    }
                    out.push(ConstraintItem {
                        stage: s.stage,
                        hint: j + 1,
                        index: k + 1,
                        id: c.id.clone(),
                        text: c.text.clone(),
                        objects,
                    });
                }
            }
        }
        ConstraintsResponse { constraints: out }
    }

    /// One estimate per (stage, binding key, compatible tool).
    pub fn estimates(&self) -> EstimatesResponse {
        let mut out = Vec::new();
        for s in &self.script.stages {
            let mut keys = BTreeSet::new();
            for c in s.hints.iter().flat_map(|h| &h.constraints) {
                for b in c.bindings.values() {
                    keys.insert(b.key());
                }
            }
            for key in keys {
                let class = self
                    .classes
                    .get(&key.object)
                    .map(String::as_str)
                    .unwrap_or("");
                for t in self
                    .registry
                    .tools
                    .iter()
                    .filter(|t| t.output.satisfies(key.requirement))
                {
                    let p = match &self.script.p_succ {
                        PSuccSource::Capabilities => {
                            t.capability(class, key.requirement).unwrap_or(0.0)
                        }
                        PSuccSource::Table(m) => m.get(&t.name).copied().unwrap_or(0.0),
                    };
                    out.push(EstimateItem {
                        stage: s.stage,
                        object: key.object.clone(),
                        part: key.part.clone(),
                        requirement: key.requirement,
                        granularity: key.granularity,
                        tool: t.name.clone(),
                        p,
                    });
                }
            }
        }
        EstimatesResponse { estimates: out }
    }

    pub fn emit(&self) -> EmitResponse {
        let mut functions = Vec::new();
        let mut programs = Vec::new();
        for s in &self.script.stages {
            for c in s.hints.iter().flat_map(|h| &h.constraints) {
                functions.push(FunctionItem {
                    stage: s.stage,
                    id: c.id.clone(),
                    kind: c.kind,
                    expr: c.expr.clone(),
                    bindings: c
                        .bindings
                        .iter()
                        .map(|(name, b)| BindingItem {
                            name: name.clone(),
                            object: b.object.clone(),
                            part: b.part.clone(),
                            requirement: b.requirement,
                            granularity: b.granularity,
                            group: b.group.clone(),
                        })
                        .collect(),
                });
            }
            programs.push(ProgramItem {
                stage: s.stage,
                gripper_end: s.gripper_end,
                motion: s.motion,
                program: s.program.clone(),
            });
        }
        EmitResponse {
            functions,
            programs,
        }
    }

    fn single_shot(&self, payload: &Value) -> Value {
        let mut v = serde_json::to_value(SingleShotResponse {
            decompose: self.decompose(),
            constraints: self.constraints(),
            estimates: self.estimates(),
            emit: self.emit(),
        })
        .expect("serializable");
        let seed = payload.get("seed").and_then(Value::as_u64).unwrap_or(0);
        let mut r = rng::stream(seed, "single_shot_error", &[]);
        let u: f64 = r.random();
        if u < self.single_shot_error_p {
            let paths = field_paths(&v);
            if !paths.is_empty() {
                let i = r.random_range(0..paths.len());
                delete_field(&mut v, &paths[i]);
            }
        }
        v
    }
}

impl GroundingBackend for OracleBackend {
    fn call(&self, phase: Phase, payload: &Value) -> Result<Value, BackendError> {
        let v = match phase {
            Phase::Decompose => serde_json::to_value(self.decompose()),
            Phase::Constraints => serde_json::to_value(self.constraints()),
            Phase::Estimate => serde_json::to_value(self.estimates()),
            Phase::Emit => serde_json::to_value(self.emit()),
            Phase::SingleShot => return Ok(self.single_shot(payload)),
        };
        Ok(v.unwrap_or_else(|e| json!({ "error": e.to_string() })))
    }
}
