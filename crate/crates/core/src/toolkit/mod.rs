//! Spatial representation extraction: the tool registry, utility-based tool
//! selection, simulated extractors and crop-then-extract refinement.

mod extract;
mod registry;
mod select;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Pose, UnitVector3};

pub use extract::{
    crop_subimage, extract, extract_fine, extract_in_region, extract_state, extract_topo,
    extract_with, AuditLog, ExtractOptions, ExtractionRecord, Padding, Target,
};
pub use registry::{
    registry_from_str, registry_load, Capability, InputKind, LatencyModel, NoiseModel, Registry,
    ToolSpec, DEFAULT_LAMBDA,
};
pub use select::{select_tool, utility, Selected, UtilityRow};

/// Variant tag of a [`RepresentationValue`], also used as a requirement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationKind {
    Point,
    PointSet,
    Vector,
    Pose,
    Region,
    StateMachine,
    TopoOrder,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 7] = [
        RepresentationKind::Point,
        RepresentationKind::PointSet,
        RepresentationKind::Vector,
        RepresentationKind::Pose,
        RepresentationKind::Region,
        RepresentationKind::StateMachine,
        RepresentationKind::TopoOrder,
    ];

    /// Whether a tool producing `self` can serve `requirement`.
    /// A point can be read off a point set (centroid) or a pose (translation).
    pub fn satisfies(self, requirement: RepresentationKind) -> bool {
        use RepresentationKind::*;
        self == requirement || (requirement == Point && matches!(self, PointSet | Pose))
    }

    /// Kinds the solver consumes directly without a stage program.
    pub fn is_conventional(self) -> bool {
        use RepresentationKind::*;
        matches!(self, Point | PointSet | Vector | Pose)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RepresentationKind::Point => "point",
            RepresentationKind::PointSet => "point_set",
            RepresentationKind::Vector => "vector",
            RepresentationKind::Pose => "pose",
            RepresentationKind::Region => "region",
            RepresentationKind::StateMachine => "state_machine",
            RepresentationKind::TopoOrder => "topo_order",
        }
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Coarse,
    Fine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub label: String,
    pub point: Point3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RepresentationValue {
    Point {
        point: Point3,
    },
    PointSet {
        points: Vec<LabeledPoint>,
    },
    Vector {
        origin: Point3,
        direction: UnitVector3,
    },
    Pose {
        pose: Pose,
    },
    Region {
        object: String,
        part: Option<String>,
        center: Pose,
        half_extents: [f64; 3],
    },
    StateMachine {
        object: String,
        state: String,
    },
    TopoOrder {
        order: Vec<String>,
    },
}

impl RepresentationValue {
    pub fn kind(&self) -> RepresentationKind {
        match self {
            RepresentationValue::Point { .. } => RepresentationKind::Point,
            RepresentationValue::PointSet { .. } => RepresentationKind::PointSet,
            RepresentationValue::Vector { .. } => RepresentationKind::Vector,
            RepresentationValue::Pose { .. } => RepresentationKind::Pose,
            RepresentationValue::Region { .. } => RepresentationKind::Region,
            RepresentationValue::StateMachine { .. } => RepresentationKind::StateMachine,
            RepresentationValue::TopoOrder { .. } => RepresentationKind::TopoOrder,
        }
    }

    /// Representative position, if the value has one.
    pub fn point(&self) -> Option<Point3> {
        match self {
            RepresentationValue::Point { point } => Some(*point),
            RepresentationValue::PointSet { points } if !points.is_empty() => {
                let sum = points.iter().fold(Point3::ORIGIN, |acc, p| acc + p.point);
                Some(sum * (1.0 / points.len() as f64))
            }
            RepresentationValue::Vector { origin, .. } => Some(*origin),
            RepresentationValue::Pose { pose } => Some(pose.translation),
            RepresentationValue::Region { center, .. } => Some(center.translation),
            _ => None,
        }
    }

    pub fn pose(&self) -> Option<Pose> {
        match self {
            RepresentationValue::Pose { pose } => Some(*pose),
            RepresentationValue::Region { center, .. } => Some(*center),
            _ => None,
        }
    }

    /// Applies a rigid motion to every geometric field.
    pub fn transformed(&self, t: &Pose) -> RepresentationValue {
        match self {
            RepresentationValue::Point { point } => RepresentationValue::Point {
                point: t.transform_point(point),
            },
            RepresentationValue::PointSet { points } => RepresentationValue::PointSet {
                points: points
                    .iter()
                    .map(|p| LabeledPoint {
                        label: p.label.clone(),
                        point: t.transform_point(&p.point),
                    })
                    .collect(),
            },
            RepresentationValue::Vector { origin, direction } => RepresentationValue::Vector {
                origin: t.transform_point(origin),
                direction: UnitVector3::normalize(t.transform_vector(&direction.as_point()))
                    .expect("rotation preserves norm"),
            },
            RepresentationValue::Pose { pose } => RepresentationValue::Pose {
                pose: t.compose(pose),
            },
            RepresentationValue::Region {
                object,
                part,
                center,
                half_extents,
            } => RepresentationValue::Region {
                object: object.clone(),
                part: part.clone(),
                center: t.compose(center),
                half_extents: *half_extents,
            },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolkitError {
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
    #[error("duplicate tool name `{0}`")]
    DuplicateTool(String),
    #[error("tool `{tool}`: malformed capability: {message}")]
    BadCapability { tool: String, message: String },
    #[error("tool `{tool}`: {message}")]
    BadTool { tool: String, message: String },
    #[error("unsatisfiable requirement `{requirement}`; registry provides [{}]", .available.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", "))]
    Unsatisfiable {
        requirement: RepresentationKind,
        available: Vec<RepresentationKind>,
    },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("elapsed time must be non-negative, got {0}")]
    NegativeElapsed(f64),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("object `{object}` has no part `{part}`")]
    UnknownPart { object: String, part: String },
    #[error("`{0}` has fewer than two keypoints")]
    NoKeypoints(String),
    #[error("object `{0}` has no state machine")]
    NoStateMachine(String),
    #[error("internal error: support graph has a cycle among {0:?}")]
    Cycle(Vec<String>),
    #[error("tool `{tool}` cannot extract this target: {message}")]
    BadTarget { tool: String, message: String },
}
