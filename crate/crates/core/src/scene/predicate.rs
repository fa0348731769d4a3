use serde::{Deserialize, Serialize};

use super::{SceneError, SceneState};
use crate::geometry::{angle_between, Point3};

/// Geometric or stateful task-success check, evaluated on the final scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predicate", content = "params", rename_all = "snake_case")]
pub enum SuccessPredicate {
    /// `object` rests directly on `support` with its center within `max_offset` (xy).
    RestingOn {
        object: String,
        support: String,
        max_offset: f64,
    },
    /// `object` rests on the table next to `reference`, with matching orientation.
    PoseAligned {
        object: String,
        reference: String,
        max_angle: f64,
        min_distance: f64,
        max_distance: f64,
    },
    StateIs {
        object: String,
        state: String,
    },
    /// `object` rests inside `container`, its local `axis` within `max_angle` of +z.
    UprightIn {
        object: String,
        container: String,
        axis: [f64; 3],
        max_angle: f64,
    },
    /// Every `[object, pad]` pair rests as given and nothing toppled.
    Unstacked {
        pairs: Vec<[String; 2]>,
    },
}

impl SuccessPredicate {
    pub fn objects(&self) -> Vec<&str> {
        match self {
            SuccessPredicate::RestingOn {
                object, support, ..
            } => vec![object, support],
            SuccessPredicate::PoseAligned {
                object, reference, ..
            } => vec![object, reference],
            SuccessPredicate::StateIs { object, .. } => vec![object],
            SuccessPredicate::UprightIn {
                object, container, ..
            } => vec![object, container],
            SuccessPredicate::Unstacked { pairs } => pairs
                .iter()
                .flat_map(|p| [p[0].as_str(), p[1].as_str()])
                .collect(),
        }
    }

    pub fn evaluate(&self, s: &SceneState) -> Result<bool, SceneError> {
        for id in self.objects() {
            s.require(id)?;
        }
        let free =
            |id: &str| s.attached_id() != Some(id) && !s.require(id).expect("checked").toppled;
        Ok(match self {
            SuccessPredicate::RestingOn {
                object,
                support,
                max_offset,
            } => {
                let o = s.require(object)?;
                let b = s.require(support)?;
                free(object)
                    && o.supports == [support.clone()]
                    && xy_distance(&o.pose.translation, &b.pose.translation) <= *max_offset
            }
            SuccessPredicate::PoseAligned {
                object,
                reference,
                max_angle,
                min_distance,
                max_distance,
            } => {
                let o = s.require(object)?;
                let r = s.require(reference)?;
                let d = xy_distance(&o.pose.translation, &r.pose.translation);
                free(object)
                    && o.supports.is_empty()
                    && o.pose.rotation.geodesic(&r.pose.rotation) <= *max_angle
                    && (*min_distance..=*max_distance).contains(&d)
            }
            SuccessPredicate::StateIs { object, state } => {
                s.require(object)?.current_state() == Some(state.as_str())
            }
            SuccessPredicate::UprightIn {
                object,
                container,
                axis,
                max_angle,
            } => {
                let o = s.require(object)?;
                let world_axis = o
                    .pose
                    .rotation
                    .apply(&Point3::new(axis[0], axis[1], axis[2]));
                free(object)
                    && o.supports == [container.clone()]
                    && angle_between(&world_axis, &Point3::new(0.0, 0.0, 1.0)) <= *max_angle
            }
            SuccessPredicate::Unstacked { pairs } => {
                pairs.iter().all(|[obj, pad]| {
                    free(obj) && s.require(obj).expect("checked").supports == [pad.clone()]
                }) && s.objects.iter().all(|o| !o.toppled)
            }
        })
    }
}

fn xy_distance(a: &Point3, b: &Point3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}
