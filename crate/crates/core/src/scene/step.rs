use super::{Grasp, GraspKind, SceneError, SceneState};
use crate::geometry::{Gripper, Point3, Trajectory};

pub fn scene_step(s: &SceneState, tau: &Trajectory) -> Result<SceneState, SceneError> {
    scene_step_with_timeline(s, tau).map(|(s, _)| s)
}

/// Executes a trajectory and also returns the state after each waypoint.
pub fn scene_step_with_timeline(
    s: &SceneState,
    tau: &Trajectory,
) -> Result<(SceneState, Vec<SceneState>), SceneError> {
    for (index, w) in tau.waypoints().iter().enumerate() {
        if !s.workspace.contains(&w.pose.translation) {
            return Err(SceneError::OutsideWorkspace {
                index,
                point: w.pose.translation,
            });
        }
    }
    let mut state = s.clone();
    let mut timeline = Vec::with_capacity(tau.waypoints().len());
    for w in tau.waypoints() {
        let dist = state.ee_pose.translation.distance(&w.pose.translation);
        state.advance_clock(dist / state.sim.speed);
        state.ee_pose = w.pose;
        follow_ee(&mut state);
        match w.gripper {
            Gripper::Close => close(&mut state),
            Gripper::Open => open(&mut state),
            Gripper::Hold => {}
        }
        timeline.push(state.clone());
    }
    Ok((state, timeline))
}

fn follow_ee(s: &mut SceneState) {
    let Some(grasp) = s.attached.clone() else {
        return;
    };
    let ee = s.ee_pose;
    let obj = s.object_mut(&grasp.object).expect("attached id exists");
    match grasp.kind {
        GraspKind::Rigid { offset } => obj.pose = ee.compose(&offset),
        GraspKind::Articulated {
            anchor,
            start_ee,
            start_displacement,
        } => {
            let art = obj.articulation.as_ref().expect("articulated grasp");
            let axis = obj.pose.rotation.apply(&art.axis.as_point());
            let d =
                (start_displacement + (ee.translation - start_ee).dot(&axis)).clamp(0.0, art.depth);
            let threshold = art.threshold();
            obj.pose.translation = anchor + axis * d;
            obj.articulation
                .as_mut()
                .expect("articulated grasp")
                .displacement = d;
            if d + 1e-12 >= threshold {
                obj.fire("pull");
            } else {
                obj.fire("push");
            }
        }
    }
}

fn close(s: &mut SceneState) {
    if s.attached.is_some() {
        return;
    }
    let ee = s.ee_pose.translation;
    let mut best: Option<(f64, usize, bool)> = None;
    for (i, o) in s.objects.iter().enumerate() {
        let (points, articulated): (Vec<Point3>, bool) = if let Some(a) = &o.articulation {
            let p = o.part_pose(&a.part).expect("validated part").translation;
            (vec![p], true)
        } else if o.fixed {
            continue;
        } else {
            let mut pts = vec![o.pose.translation];
            pts.extend(o.world_keypoints());
            pts.extend(
                o.parts
                    .iter()
                    .map(|p| o.pose.compose(&p.local_pose).translation),
            );
            (pts, false)
        };
        for p in points {
            let d = p.distance(&ee);
            if d <= s.sim.grasp_radius && best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, i, articulated));
            }
        }
    }
    let Some((_, i, articulated)) = best else {
        return;
    };
    let id = s.objects[i].id.clone();
    if articulated {
        let o = &s.objects[i];
        let art = o.articulation.as_ref().expect("articulated");
        let axis = o.pose.rotation.apply(&art.axis.as_point());
        s.attached = Some(Grasp {
            object: id,
            kind: GraspKind::Articulated {
                anchor: o.pose.translation - axis * art.displacement,
                start_ee: ee,
                start_displacement: art.displacement,
            },
        });
        return;
    }
    // Lifting an object topples everything resting on it.
    for dep in s.dependents(&id) {
        let d = s.object_mut(&dep).expect("dependent exists");
        d.toppled = true;
        d.supports.clear();
    }
    let o = &mut s.objects[i];
    o.supports.clear();
    let offset = s.ee_pose.inverse().compose(&o.pose);
    s.attached = Some(Grasp {
        object: id,
        kind: GraspKind::Rigid { offset },
    });
}

fn open(s: &mut SceneState) {
    let Some(grasp) = s.attached.take() else {
        return;
    };
    if matches!(grasp.kind, GraspKind::Rigid { .. }) {
        settle(s, &grasp.object);
    }
}

/// Drops the object vertically onto the highest surface under its center
/// that lies at or below the center. Containers offer their inner floor.
fn settle(s: &mut SceneState, id: &str) {
    let obj = s.object(id).expect("settled object exists");
    let c = obj.pose.translation;
    let half_z = obj.body().aabb().max.z - c.z;
    let mut surface = s.table_z();
    let mut support: Option<String> = None;
    for other in &s.objects {
        if other.id == id || other.toppled {
            continue;
        }
        let b = other.body().aabb();
        let inside = c.x >= b.min.x && c.x <= b.max.x && c.y >= b.min.y && c.y <= b.max.y;
        if !inside {
            continue;
        }
        let top = if other.container { b.min.z } else { b.max.z };
        // A container floor level with the table still counts as the support.
        let higher =
            top > surface || (support.is_none() && other.container && top >= surface - 1e-12);
        if top <= c.z + 1e-9 && higher {
            surface = top;
            support = Some(other.id.clone());
        }
    }
    let obj = s.object_mut(id).expect("settled object exists");
    obj.pose.translation.z = surface + half_z;
    obj.supports = support.into_iter().collect();
}
