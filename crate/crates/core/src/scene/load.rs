use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SceneError, SceneObject, SceneState, SimConfig};
use crate::geometry::{Aabb, Point3, Pose};

pub const SCENE_SCHEMA: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    schema: u32,
    units: String,
    workspace: Aabb,
    #[serde(default)]
    placement: Option<Aabb>,
    objects: Vec<SceneObject>,
    #[serde(default)]
    ee_pose: Option<Pose>,
    #[serde(default)]
    sim: SimConfig,
    /// Reserved for rendered channels; ignored by the simulator.
    #[serde(default)]
    raster: Option<serde_json::Value>,
}

pub fn scene_load(path: impl AsRef<Path>) -> Result<SceneState, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    scene_from_str(&text, &path.display().to_string())
}

/// Parses and validates a scene; `origin` labels diagnostics.
pub fn scene_from_str(text: &str, origin: &str) -> Result<SceneState, SceneError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: SceneFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        SceneError::Parse {
            path: origin.to_string(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    build(file)
}

fn invalid(id: &str, message: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        id: id.to_string(),
        message: message.into(),
    }
}

fn within_double_extent(p: &Point3, extent: &[f64; 3]) -> bool {
    (0..3).all(|i| p.component(i).abs() <= 2.0 * extent[i] + 1e-12)
}

fn valid_extent(e: &[f64; 3]) -> bool {
    e.iter().all(|v| v.is_finite() && *v > 0.0)
}

fn build(file: SceneFile) -> Result<SceneState, SceneError> {
    if file.schema != SCENE_SCHEMA {
        return Err(SceneError::Scene(format!(
            "unsupported schema {} (expected {SCENE_SCHEMA})",
            file.schema
        )));
    }
    if file.units != "meters" {
        return Err(SceneError::Scene(format!(
            "units must be \"meters\", got {:?}",
            file.units
        )));
    }
    if file.workspace.is_inverted() {
        return Err(SceneError::Scene("workspace bounds are inverted".into()));
    }
    let mut objects = file.objects;
    let mut seen = BTreeSet::new();
    for o in &objects {
        if o.id.is_empty() {
            return Err(SceneError::Scene("object with empty id".into()));
        }
        if !seen.insert(o.id.clone()) {
            return Err(invalid(&o.id, "duplicate id"));
        }
    }
    for o in &mut objects {
        if !valid_extent(&o.extent) {
            return Err(invalid(&o.id, "extent must be positive and finite"));
        }
        if o.keypoints
            .iter()
            .any(|k| !within_double_extent(k, &o.extent))
        {
            return Err(invalid(&o.id, "keypoint outside 2x extent box"));
        }
        let mut part_names = BTreeSet::new();
        for p in &o.parts {
            if !part_names.insert(p.name.as_str()) {
                return Err(invalid(&o.id, format!("duplicate part `{}`", p.name)));
            }
            if !valid_extent(&p.extent) {
                return Err(invalid(
                    &o.id,
                    format!("part `{}` has a bad extent", p.name),
                ));
            }
            if p.keypoints
                .iter()
                .any(|k| !within_double_extent(k, &p.extent))
            {
                return Err(invalid(
                    &o.id,
                    format!("part `{}` keypoint outside 2x extent box", p.name),
                ));
            }
        }
        for s in &o.supports {
            if s == &o.id {
                return Err(invalid(&o.id, "object supports itself"));
            }
            if !seen.contains(s) {
                return Err(invalid(&o.id, format!("dangling support id `{s}`")));
            }
        }
        if let Some(spec) = &o.states {
            let states: BTreeSet<&str> = spec.states.iter().map(|s| s.as_str()).collect();
            if !states.contains(spec.initial.as_str()) {
                return Err(invalid(
                    &o.id,
                    format!("initial state `{}` not declared", spec.initial),
                ));
            }
            let mut keys = BTreeSet::new();
            for t in &spec.transitions {
                if !states.contains(t.from.as_str()) || !states.contains(t.to.as_str()) {
                    return Err(invalid(
                        &o.id,
                        format!(
                            "transition {} -{}-> {} uses an undeclared state",
                            t.from, t.action, t.to
                        ),
                    ));
                }
                if !keys.insert((t.from.as_str(), t.action.as_str())) {
                    return Err(invalid(
                        &o.id,
                        format!(
                            "non-deterministic transition from `{}` on `{}`",
                            t.from, t.action
                        ),
                    ));
                }
            }
            match &o.state {
                Some(s) if !states.contains(s.as_str()) => {
                    return Err(invalid(&o.id, format!("current state `{s}` not declared")));
                }
                Some(_) => {}
                None => o.state = Some(spec.initial.clone()),
            }
        } else if o.state.is_some() {
            return Err(invalid(&o.id, "state given without a state machine"));
        }
        if let Some(a) = &o.articulation {
            if o.part(&a.part).is_none() {
                return Err(invalid(
                    &o.id,
                    format!("articulation part `{}` missing", a.part),
                ));
            }
            if !(a.depth > 0.0 && a.depth.is_finite()) {
                return Err(invalid(&o.id, "articulation depth must be positive"));
            }
            if !(a.open_fraction > 0.0 && a.open_fraction <= 1.0) {
                return Err(invalid(&o.id, "open_fraction must be in (0, 1]"));
            }
            if !(0.0..=a.depth).contains(&a.displacement) {
                return Err(invalid(&o.id, "displacement outside [0, depth]"));
            }
        }
    }
    let placement = file.placement.unwrap_or(file.workspace);
    if placement.is_inverted() {
        return Err(SceneError::InvertedBounds);
    }
    let state = SceneState {
        workspace: file.workspace,
        placement,
        ee_pose: file
            .ee_pose
            .unwrap_or_else(|| Pose::from_translation(Point3::new(0.0, 0.0, 0.4))),
        objects,
        attached: None,
        clock: 0.0,
        sim: file.sim,
    };
    if !state.support_graph_acyclic() {
        let id = state
            .objects
            .iter()
            .find(|o| !o.supports.is_empty())
            .map(|o| o.id.clone())
            .unwrap_or_default();
        return Err(invalid(&id, "support graph has a cycle"));
    }
    if !state.workspace.contains(&state.ee_pose.translation) {
        return Err(SceneError::Scene("ee_pose outside the workspace".into()));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_BLOCK: &str = r#"{
        "schema": 1, "units": "meters",
        "workspace": {"min": [-1, -1, 0], "max": [1, 1, 1]},
        "objects": [
            {"id": "a", "class": "block",
             "pose": {"quaternion": [1, 0, 0, 0], "translation": [0, 0, 0.025]},
             "extent": [0.025, 0.025, 0.025]}
        ]
    }"#;

    #[test]
    fn minimal_scene() {
        let s = scene_from_str(ONE_BLOCK, "one.json").unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.sim.grasp_radius, 0.02);
        assert_eq!(s.placement, s.workspace);
    }

    #[test]
    fn dangling_support_names_the_id() {
        let text = ONE_BLOCK.replace(
            r#""class": "block","#,
            r#""class": "block", "supports": ["ghost"],"#,
        );
        let err = scene_from_str(&text, "x.json").unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
        assert!(err.to_string().contains("`a`"), "{err}");
    }

    #[test]
    fn parse_error_reports_field_and_line() {
        let text = ONE_BLOCK.replace(r#""extent": [0.025, 0.025, 0.025]"#, r#""extent": "big""#);
        match scene_from_str(&text, "x.json").unwrap_err() {
            SceneError::Parse { field, line, .. } => {
                assert_eq!(field, "objects[0].extent");
                assert_eq!(line, 7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cycle_rejected() {
        let text = r#"{
            "schema": 1, "units": "meters",
            "workspace": {"min": [-1, -1, 0], "max": [1, 1, 1]},
            "objects": [
                {"id": "a", "class": "block", "supports": ["b"],
                 "pose": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1], "extent": [0.1, 0.1, 0.1]},
                {"id": "b", "class": "block", "supports": ["a"],
                 "pose": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1], "extent": [0.1, 0.1, 0.1]}
            ]
        }"#;
        assert!(scene_from_str(text, "c.json")
            .unwrap_err()
            .to_string()
            .contains("cycle"));
    }
}
