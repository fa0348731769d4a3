//! Synthetic tabletop scene: ground truth for the simulated extractors,
//! kinematic effects of executed trajectories, and trial randomization.

mod load;
mod observe;
mod predicate;
mod randomize;
mod step;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, OrientedBox, Point3, Pose, UnitVector3};

pub use load::{scene_from_str, scene_load, SCENE_SCHEMA};
pub use observe::{observe, Observation, OcclusionModel, RasterChannels};
pub use predicate::SuccessPredicate;
pub use randomize::{randomize, randomize_with, RandomizeOptions};
pub use step::{scene_step, scene_step_with_timeline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
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
    #[error("object `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("placement bounds are inverted")]
    InvertedBounds,
    #[error("could not place `{id}` without interpenetration after {attempts} samples")]
    Placement { id: String, attempts: usize },
    #[error("waypoint {index} at {point} is outside the workspace")]
    OutsideWorkspace { index: usize, point: Point3 },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("object `{object}` has no part `{part}`")]
    UnknownPart { object: String, part: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_grasp_radius")]
    pub grasp_radius: f64,
    /// Nominal end-effector speed, m/s.
    #[serde(default = "default_speed")]
    pub speed: f64,
}

fn default_grasp_radius() -> f64 {
    0.02
}
fn default_speed() -> f64 {
    0.25
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            grasp_radius: default_grasp_radius(),
            speed: default_speed(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePart {
    pub name: String,
    #[serde(default)]
    pub local_pose: Pose,
    #[serde(default)]
    pub keypoints: Vec<Point3>,
    /// Half-sizes of the part box, meters.
    pub extent: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub from: String,
    pub action: String,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateMachineSpec {
    pub states: Vec<String>,
    pub initial: String,
    pub transitions: Vec<Transition>,
}

impl StateMachineSpec {
    pub fn next(&self, from: &str, action: &str) -> Option<&str> {
        self.transitions
            .iter()
            .find(|t| t.from == from && t.action == action)
            .map(|t| t.to.as_str())
    }
}

/// Prismatic joint driven by pulling one of the object's parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Articulation {
    pub part: String,
    /// Opening direction in the object frame.
    pub axis: UnitVector3,
    pub depth: f64,
    /// Fraction of `depth` past which a `pull` transition fires.
    #[serde(default = "default_open_fraction")]
    pub open_fraction: f64,
    #[serde(default)]
    pub displacement: f64,
}

fn default_open_fraction() -> f64 {
    1.0 / 3.0
}

impl Articulation {
    pub fn threshold(&self) -> f64 {
        self.open_fraction * self.depth
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: String,
    #[serde(default)]
    pub label: String,
    /// Object class used for capability lookup (e.g. "block", "plush").
    pub class: String,
    /// Pose of the body center.
    pub pose: Pose,
    /// Half-sizes of the body box, meters.
    pub extent: [f64; 3],
    #[serde(default)]
    pub keypoints: Vec<Point3>,
    #[serde(default)]
    pub parts: Vec<ScenePart>,
    #[serde(default)]
    pub states: Option<StateMachineSpec>,
    /// Current state; defaults to the state machine's initial state.
    #[serde(default)]
    pub state: Option<String>,
    #[serde(default)]
    pub supports: Vec<String>,
    /// Not graspable and never moved by randomization of its supporters.
    #[serde(default)]
    pub fixed: bool,
    /// Released objects settle onto the inner floor instead of the top.
    #[serde(default)]
    pub container: bool,
    #[serde(default)]
    pub articulation: Option<Articulation>,
    #[serde(default)]
    pub toppled: bool,
}

impl SceneObject {
    pub fn body(&self) -> OrientedBox {
        OrientedBox {
            pose: self.pose,
            half_extents: self.extent,
        }
    }

    pub fn part(&self, name: &str) -> Option<&ScenePart> {
        self.parts.iter().find(|p| p.name == name)
    }

    pub fn part_pose(&self, name: &str) -> Option<Pose> {
        self.part(name).map(|p| self.pose.compose(&p.local_pose))
    }

    pub fn part_box(&self, name: &str) -> Option<OrientedBox> {
        self.part(name).map(|p| OrientedBox {
            pose: self.pose.compose(&p.local_pose),
            half_extents: p.extent,
        })
    }

    /// Body keypoints in the world frame.
    pub fn world_keypoints(&self) -> Vec<Point3> {
        self.keypoints
            .iter()
            .map(|k| self.pose.transform_point(k))
            .collect()
    }

    pub fn part_world_keypoints(&self, name: &str) -> Option<Vec<Point3>> {
        let part = self.part(name)?;
        let pose = self.pose.compose(&part.local_pose);
        Some(
            part.keypoints
                .iter()
                .map(|k| pose.transform_point(k))
                .collect(),
        )
    }

    /// World bounds of the body and all parts.
    pub fn aabb(&self) -> Aabb {
        let mut b = self.body().aabb();
        for p in &self.parts {
            let pb = self.part_box(&p.name).expect("part exists").aabb();
            for i in 0..3 {
                b.min = b
                    .min
                    .with_component(i, b.min.component(i).min(pb.min.component(i)));
                b.max = b
                    .max
                    .with_component(i, b.max.component(i).max(pb.max.component(i)));
            }
        }
        b
    }

    pub fn current_state(&self) -> Option<&str> {
        self.state.as_deref()
    }

    fn fire(&mut self, action: &str) {
        let (Some(spec), Some(state)) = (&self.states, &self.state) else {
            return;
        };
        if let Some(to) = spec.next(state, action) {
            self.state = Some(to.to_string());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraspKind {
    /// Object pose = ee pose ∘ offset while held.
    Rigid { offset: Pose },
    /// Displacement follows the ee motion projected on the joint axis.
    Articulated {
        anchor: Point3,
        start_ee: Point3,
        start_displacement: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub object: String,
    pub kind: GraspKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub workspace: Aabb,
    /// Default randomization bounds.
    pub placement: Aabb,
    pub objects: Vec<SceneObject>,
    pub attached: Option<Grasp>,
    pub ee_pose: Pose,
    /// Simulated seconds.
    pub clock: f64,
    pub sim: SimConfig,
}

impl SceneState {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: &str) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&SceneObject, SceneError> {
        self.object(id)
            .ok_or_else(|| SceneError::UnknownObject(id.to_string()))
    }

    pub fn attached_id(&self) -> Option<&str> {
        self.attached.as_ref().map(|g| g.object.as_str())
    }

    /// True when the object is held with a rigid grasp.
    pub fn is_carried(&self, id: &str) -> bool {
        matches!(&self.attached, Some(Grasp { object, kind: GraspKind::Rigid { .. } }) if object == id)
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.objects.iter().map(|o| o.id.as_str()).collect()
    }

    /// Table surface height.
    pub fn table_z(&self) -> f64 {
        self.workspace.min.z
    }

    pub fn advance_clock(&mut self, dt: f64) {
        if dt > 0.0 {
            self.clock += dt;
        }
    }

    /// Every object resting directly or transitively on `id`.
    pub fn dependents(&self, id: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut frontier = vec![id.to_string()];
        while let Some(cur) = frontier.pop() {
            for o in &self.objects {
                if o.supports.contains(&cur) && !out.contains(&o.id) {
                    out.push(o.id.clone());
                    frontier.push(o.id.clone());
                }
            }
        }
        out.sort();
        out
    }

    /// Checks that the support graph has no cycles.
    pub fn support_graph_acyclic(&self) -> bool {
        let edges: BTreeMap<&str, Vec<&str>> = self
            .objects
            .iter()
            .map(|o| {
                (
                    o.id.as_str(),
                    o.supports.iter().map(|s| s.as_str()).collect(),
                )
            })
            .collect();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut mark: BTreeMap<&str, u8> = BTreeMap::new();
        fn visit<'a>(
            n: &'a str,
            edges: &BTreeMap<&'a str, Vec<&'a str>>,
            mark: &mut BTreeMap<&'a str, u8>,
        ) -> bool {
            match mark.get(n) {
                Some(1) => return false,
                Some(2) => return true,
                _ => {}
            }
            mark.insert(n, 1);
            for &m in edges.get(n).map(|v| v.as_slice()).unwrap_or(&[]) {
                if !visit(m, edges, mark) {
                    return false;
                }
            }
            mark.insert(n, 2);
            true
        }
        edges.keys().all(|n| visit(n, &edges, &mut mark))
    }
}
