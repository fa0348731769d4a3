//! Phase request and response shapes.
//!
//! Every response field is required; optional values must be present as
//! `null`. Unknown fields are rejected.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Phase;
use crate::dsl::{Binding, ConstraintKind};
use crate::geometry::Gripper;
use crate::planner::{MotionStyle, StageProgram};
use crate::toolkit::{Granularity, RepresentationKind};

/// Schema version carried in every payload.
pub const PHASE_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeResponse {
    pub stages: Vec<StageHints>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageHints {
    pub stage: usize,
    pub hints: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsResponse {
    pub constraints: Vec<ConstraintItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintItem {
    pub stage: usize,
    /// 1-based hint index within the stage.
    pub hint: usize,
    /// 1-based constraint index within the hint.
    pub index: usize,
    pub id: String,
    pub text: String,
    pub objects: Vec<ObjectItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectItem {
    pub object: String,
    #[serde(deserialize_with = "Option::deserialize")]
    pub part: Option<String>,
    pub requirement: RepresentationKind,
    pub granularity: Granularity,
    pub group: Vec<String>,
}

impl From<&ObjectItem> for Binding {
    fn from(o: &ObjectItem) -> Binding {
        Binding {
            object: o.object.clone(),
            part: o.part.clone(),
            requirement: o.requirement,
            granularity: o.granularity,
            group: o.group.clone(),
        }
    }
}

impl From<&Binding> for ObjectItem {
    fn from(b: &Binding) -> ObjectItem {
        ObjectItem {
            object: b.object.clone(),
            part: b.part.clone(),
            requirement: b.requirement,
            granularity: b.granularity,
            group: b.group.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesResponse {
    pub estimates: Vec<EstimateItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateItem {
    pub stage: usize,
    pub object: String,
    #[serde(deserialize_with = "Option::deserialize")]
    pub part: Option<String>,
    pub requirement: RepresentationKind,
    pub granularity: Granularity,
    pub tool: String,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitResponse {
    pub functions: Vec<FunctionItem>,
    pub programs: Vec<ProgramItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionItem {
    pub stage: usize,
    /// Id of the natural-language constraint this implements.
    pub id: String,
    pub kind: ConstraintKind,
    pub expr: String,
    pub bindings: Vec<BindingItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingItem {
    pub name: String,
    pub object: String,
    #[serde(deserialize_with = "Option::deserialize")]
    pub part: Option<String>,
    pub requirement: RepresentationKind,
    pub granularity: Granularity,
    pub group: Vec<String>,
}

impl BindingItem {
    pub fn binding(&self) -> Binding {
        Binding {
            object: self.object.clone(),
            part: self.part.clone(),
            requirement: self.requirement,
            granularity: self.granularity,
            group: self.group.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramItem {
    pub stage: usize,
    pub gripper_end: Gripper,
    pub motion: MotionStyle,
    #[serde(deserialize_with = "Option::deserialize")]
    pub program: Option<StageProgram>,
}

/// All four phase responses in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleShotResponse {
    pub decompose: DecomposeResponse,
    pub constraints: ConstraintsResponse,
    pub estimates: EstimatesResponse,
    pub emit: EmitResponse,
}

/// Parses a response against its phase schema.
pub fn parse_response<T: serde::de::DeserializeOwned>(v: &Value) -> Result<T, String> {
    serde_path_to_error::deserialize(v.clone()).map_err(|e| {
        let path = e.path().to_string();
        format!("at `{path}`: {}", e.into_inner())
    })
}

/// Checks a response against the schema for `phase` without keeping it.
pub fn validate_phase(phase: Phase, v: &Value) -> Result<(), String> {
    match phase {
        Phase::Decompose => parse_response::<DecomposeResponse>(v).map(drop),
        Phase::Constraints => parse_response::<ConstraintsResponse>(v).map(drop),
        Phase::Estimate => parse_response::<EstimatesResponse>(v).map(drop),
        Phase::Emit => parse_response::<EmitResponse>(v).map(drop),
        Phase::SingleShot => parse_response::<SingleShotResponse>(v).map(drop),
    }
}

/// Field-by-field description of the expected response, used in prompts.
pub fn describe(phase: Phase) -> &'static str {
    match phase {
        Phase::Decompose => r#"{"stages": [{"stage": 1, "hints": ["<short hint>"]}]}"#,
        Phase::Constraints => {
            r#"{"constraints": [{"stage": 1, "hint": 1, "index": 1, "id": "<unique id>", "text": "<constraint>", "objects": [{"object": "<id>", "part": null, "requirement": "point|point_set|vector|pose|region|state_machine|topo_order", "granularity": "coarse|fine", "group": []}]}]}"#
        }
        Phase::Estimate => {
            r#"{"estimates": [{"stage": 1, "object": "<id>", "part": null, "requirement": "point", "granularity": "coarse", "tool": "<tool name>", "p": 0.9}]}"#
        }
        Phase::Emit => {
            r#"{"functions": [{"stage": 1, "id": "<constraint id>", "kind": "subgoal|path", "expr": "<dsl expression>", "bindings": [{"name": "<rep name>", "object": "<id>", "part": null, "requirement": "point", "granularity": "coarse", "group": []}]}], "programs": [{"stage": 1, "gripper_end": "open|close|hold", "motion": "approach|direct", "program": null}]}"#
        }
        Phase::SingleShot => {
            r#"{"decompose": <decompose response>, "constraints": <constraints response>, "estimates": <estimates response>, "emit": <emit response>}"#
        }
    }
}

/// Paths of every schema field in `v`, in document order. Entries of the
/// `branches` map are data, not fields.
pub fn field_paths(v: &Value) -> Vec<Vec<PathSeg>> {
    let mut out = Vec::new();
    fn walk(v: &Value, prefix: &mut Vec<PathSeg>, out: &mut Vec<Vec<PathSeg>>) {
        match v {
            Value::Object(m) => {
                for (k, child) in m {
                    prefix.push(PathSeg::Key(k.clone()));
                    out.push(prefix.clone());
                    if k != "branches" {
                        walk(child, prefix, out);
                    }
                    prefix.pop();
                }
            }
            Value::Array(a) => {
                for (i, child) in a.iter().enumerate() {
                    prefix.push(PathSeg::Index(i));
                    walk(child, prefix, out);
                    prefix.pop();
                }
            }
            _ => {}
        }
    }
    walk(v, &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathSeg {
    Key(String),
    Index(usize),
}

/// Removes the field at `path`. Returns false if the path does not exist.
pub fn delete_field(v: &mut Value, path: &[PathSeg]) -> bool {
    let Some((last, parents)) = path.split_last() else {
        return false;
    };
    let mut cur = v;
    for seg in parents {
        cur = match (seg, cur) {
            (PathSeg::Key(k), Value::Object(m)) => match m.get_mut(k) {
                Some(c) => c,
                None => return false,
            },
            (PathSeg::Index(i), Value::Array(a)) => match a.get_mut(*i) {
                Some(c) => c,
                None => return false,
            },
            _ => return false,
        };
    }
    match (last, cur) {
        (PathSeg::Key(k), Value::Object(m)) => m.remove(k).is_some(),
        _ => false,
    }
}
