use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SceneError, SceneState};
use crate::geometry::{Aabb, Point3, Pose, Rotation};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomizeOptions {
    /// Sample full SO(3) orientations instead of yaw only.
    pub full_rotation: bool,
    /// Minimum gap between the bounds of different support groups, meters.
    pub clearance: f64,
    pub max_attempts: usize,
}

impl Default for RandomizeOptions {
    fn default() -> Self {
        RandomizeOptions {
            full_rotation: false,
            clearance: 0.04,
            max_attempts: 1000,
        }
    }
}

pub fn randomize(s: &SceneState, seed: u64, bounds: &Aabb) -> Result<SceneState, SceneError> {
    randomize_with(s, seed, bounds, &RandomizeOptions::default())
}

/// Places every unsupported object's base (bottom center) uniformly in
/// `bounds` with a uniform yaw; objects resting on it follow rigidly.
pub fn randomize_with(
    s: &SceneState,
    seed: u64,
    bounds: &Aabb,
    opts: &RandomizeOptions,
) -> Result<SceneState, SceneError> {
    if bounds.is_inverted() {
        return Err(SceneError::InvertedBounds);
    }
    let mut out = s.clone();
    let mut r = rng::stream(seed, "randomize", &[]);

    // Group every object under the root reached by following supports[0].
    let index: BTreeMap<&str, usize> = s
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id.as_str(), i))
        .collect();
    let root_of = |mut i: usize| {
        while let Some(p) = s.objects[i].supports.first() {
            i = index[p.as_str()];
        }
        i
    };
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for i in 0..s.objects.len() {
        groups
            .entry(s.objects[root_of(i)].id.as_str())
            .or_default()
            .push(i);
    }

    let mut placed: Vec<Aabb> = Vec::new();
    for (root_id, members) in &groups {
        let root = &s.objects[index[root_id]];
        let mut ok = false;
        for _ in 0..opts.max_attempts {
            let rotation = sample_rotation(&mut r, opts, &root.pose.rotation);
            let base = sample_point(&mut r, bounds);
            let half_z = crate::geometry::OrientedBox {
                pose: Pose::from_rotation(rotation),
                half_extents: root.extent,
            }
            .aabb()
            .max
            .z;
            let new_root = Pose::new(rotation, base + Point3::new(0.0, 0.0, half_z));
            let delta = new_root.compose(&root.pose.inverse());

            let mut group_box: Option<Aabb> = None;
            let mut moved = Vec::with_capacity(members.len());
            for &m in members {
                let mut o = s.objects[m].clone();
                o.pose = delta.compose(&o.pose);
                let b = o.aabb();
                group_box = Some(match group_box {
                    None => b,
                    Some(g) => union(&g, &b),
                });
                moved.push((m, o));
            }
            let g = group_box.expect("group has its root");
            if !contains_box(&s.workspace, &g) {
                continue;
            }
            let inflated = g.inflate(opts.clearance / 2.0);
            if placed
                .iter()
                .any(|p| p.inflate(opts.clearance / 2.0).overlaps(&inflated))
            {
                continue;
            }
            for (m, o) in moved {
                out.objects[m] = o;
            }
            placed.push(g);
            ok = true;
            break;
        }
        if !ok {
            return Err(SceneError::Placement {
                id: root_id.to_string(),
                attempts: opts.max_attempts,
            });
        }
    }
    Ok(out)
}

fn sample_point(r: &mut ChaCha8Rng, b: &Aabb) -> Point3 {
    let mut axis = |lo: f64, hi: f64| if hi > lo { r.random_range(lo..hi) } else { lo };
    let x = axis(b.min.x, b.max.x);
    let y = axis(b.min.y, b.max.y);
    let z = axis(b.min.z, b.max.z);
    Point3::new(x, y, z)
}

fn sample_rotation(r: &mut ChaCha8Rng, opts: &RandomizeOptions, original: &Rotation) -> Rotation {
    if opts.full_rotation {
        // Shoemake's uniform random quaternion.
        let (u1, u2, u3): (f64, f64, f64) = (r.random(), r.random(), r.random());
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (s2, c2) = (TAU * u2).sin_cos();
        let (s3, c3) = (TAU * u3).sin_cos();
        Rotation::from_wxyz(b * c3, a * s2, a * c2, b * s3).expect("unit by construction")
    } else {
        let yaw = r.random_range(0.0..TAU);
        Rotation::rot_z(yaw).compose(original)
    }
}

fn union(a: &Aabb, b: &Aabb) -> Aabb {
    let mut out = *a;
    for i in 0..3 {
        out.min = out
            .min
            .with_component(i, a.min.component(i).min(b.min.component(i)));
        out.max = out
            .max
            .with_component(i, a.max.component(i).max(b.max.component(i)));
    }
    out
}

fn contains_box(outer: &Aabb, inner: &Aabb) -> bool {
    outer.contains(&inner.min) && outer.contains(&inner.max)
}
