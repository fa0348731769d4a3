use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    select_tool, LabeledPoint, NoiseModel, Registry, RepresentationKind, RepresentationValue,
    ToolSpec, ToolkitError,
};
use crate::geometry::{Point3, Pose, Rotation, UnitVector3};
use crate::rng;
use crate::scene::{Observation, SceneObject};

/// Adaptive crop padding as a fraction of the part's largest full extent.
const ADAPTIVE_PADDING_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Object {
        id: String,
    },
    Part {
        object: String,
        part: String,
    },
    /// Extraction restricted to a cropped region (fine granularity).
    Region {
        region: RepresentationValue,
    },
    /// Several objects at once (topological ordering).
    Group {
        ids: Vec<String>,
    },
}

impl Target {
    pub fn object(id: &str) -> Target {
        Target::Object { id: id.to_string() }
    }

    pub fn part(object: &str, part: &str) -> Target {
        Target::Part {
            object: object.to_string(),
            part: part.to_string(),
        }
    }

    pub fn object_ids(&self) -> Vec<&str> {
        match self {
            Target::Object { id } => vec![id],
            Target::Part { object, .. } => vec![object],
            Target::Region {
                region: RepresentationValue::Region { object, .. },
            } => vec![object],
            Target::Region { .. } => vec![],
            Target::Group { ids } => ids.iter().map(|s| s.as_str()).collect(),
        }
    }

    fn object_and_part(&self) -> Option<(&str, Option<&str>)> {
        match self {
            Target::Object { id } => Some((id, None)),
            Target::Part { object, part } => Some((object, Some(part))),
            Target::Region {
                region: RepresentationValue::Region { object, part, .. },
            } => Some((object, part.as_deref())),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Fixed(f64),
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractOptions {
    pub stage: usize,
    /// Requirement being served, for capability lookup; defaults to the tool output.
    pub requirement: Option<RepresentationKind>,
    /// Ground truth: no noise and no capability failures.
    pub exact: bool,
    pub padding: Padding,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            stage: 1,
            requirement: None,
            exact: false,
            padding: Padding::Adaptive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub tool: String,
    #[serde(default)]
    pub crop_tool: Option<String>,
    pub stage: usize,
    pub object: String,
    #[serde(default)]
    pub part: Option<String>,
    pub value: Option<RepresentationValue>,
    pub elapsed_s: f64,
    pub succeeded: bool,
    pub occluded: bool,
    pub timestamp: f64,
}

/// Append-only log of extraction records, serialized one JSON object per line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    records: Vec<ExtractionRecord>,
}

impl AuditLog {
    pub fn push(&mut self, r: ExtractionRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[ExtractionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn append_to(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }
}

pub fn extract(
    tool: &ToolSpec,
    obs: &Observation,
    target: &Target,
    seed: u64,
) -> Result<ExtractionRecord, ToolkitError> {
    extract_with(tool, obs, target, &ExtractOptions::default(), seed)
}

fn find<'a>(obs: &'a Observation, id: &str) -> Result<&'a SceneObject, ToolkitError> {
    obs.snapshot
        .object(id)
        .ok_or_else(|| ToolkitError::UnknownObject(id.to_string()))
}

/// Runs one simulated extractor. A missing target is an error; occlusion,
/// capability misses and dropout yield `succeeded = false`.
pub fn extract_with(
    tool: &ToolSpec,
    obs: &Observation,
    target: &Target,
    opts: &ExtractOptions,
    seed: u64,
) -> Result<ExtractionRecord, ToolkitError> {
    let ids = target.object_ids();
    let first = *ids.first().ok_or_else(|| ToolkitError::BadTarget {
        tool: tool.name.clone(),
        message: "empty target".into(),
    })?;
    for id in &ids {
        find(obs, id)?;
    }
    if let Some((object, Some(part))) = target.object_and_part() {
        if find(obs, object)?.part(part).is_none() {
            return Err(ToolkitError::UnknownPart {
                object: object.to_string(),
                part: part.to_string(),
            });
        }
    }

    let mut r = rng::stream(seed, "extract", &[]);
    let u_succ: f64 = r.random();
    let u_lat: f64 = r.random();
    let u_drop: f64 = r.random();

    let lat = tool.latency_model();
    let elapsed_s = (lat.mean_s + lat.jitter_s * (2.0 * u_lat - 1.0)).max(0.0);

    let fine = matches!(target, Target::Region { .. });
    let noise = if opts.exact {
        NoiseModel::None
    } else if fine {
        tool.noise.scaled(tool.fine_scale)
    } else {
        tool.noise
    };
    let (truth, span) = ground_truth(tool, obs, target, opts)?;
    let value = apply_noise(&truth, span, &noise, &mut r);

    let occluded = !tool.occlusion_tolerant && ids.iter().any(|id| obs.is_occluded(id));
    let requirement = opts.requirement.unwrap_or(tool.output);
    let class = &find(obs, first)?.class;
    let p = if opts.exact {
        1.0
    } else {
        tool.capability(class, requirement).unwrap_or(0.0)
    };
    let dropped = matches!(noise, NoiseModel::Dropout { p } if u_drop < p);
    let succeeded = !occluded && u_succ < p && !dropped;

    let (object, part) = match target.object_and_part() {
        Some((o, p)) => (o.to_string(), p.map(str::to_string)),
        None => (first.to_string(), None),
    };
    Ok(ExtractionRecord {
        tool: tool.name.clone(),
        crop_tool: None,
        stage: opts.stage,
        object,
        part,
        value: succeeded.then_some(value),
        elapsed_s,
        succeeded,
        occluded,
        timestamp: obs.timestamp,
    })
}

fn keypoints_of(obj: &SceneObject, part: Option<&str>) -> Vec<Point3> {
    match part {
        Some(p) => obj.part_world_keypoints(p).unwrap_or_default(),
        None => obj.world_keypoints(),
    }
}

fn pose_of(obj: &SceneObject, part: Option<&str>) -> Pose {
    match part {
        Some(p) => obj.part_pose(p).expect("part checked"),
        None => obj.pose,
    }
}

fn ground_truth(
    tool: &ToolSpec,
    obs: &Observation,
    target: &Target,
    opts: &ExtractOptions,
) -> Result<(RepresentationValue, f64), ToolkitError> {
    use RepresentationKind as K;
    let bad = |m: &str| ToolkitError::BadTarget {
        tool: tool.name.clone(),
        message: m.to_string(),
    };
    if tool.output == K::TopoOrder {
        let ids: Vec<String> = target.object_ids().iter().map(|s| s.to_string()).collect();
        return Ok((extract_topo(obs, &ids)?, 0.0));
    }
    let (object, part) = target
        .object_and_part()
        .ok_or_else(|| bad("expects a single object"))?;
    let obj = find(obs, object)?;
    let mut span = 0.0;
    let value = match tool.output {
        K::Point => RepresentationValue::Point {
            point: pose_of(obj, part).translation,
        },
        K::PointSet => {
            let mut kps = keypoints_of(obj, part);
            if kps.is_empty() {
                kps.push(pose_of(obj, part).translation);
            }
            RepresentationValue::PointSet {
                points: kps
                    .into_iter()
                    .enumerate()
                    .map(|(i, point)| LabeledPoint {
                        label: format!("kp{i}"),
                        point,
                    })
                    .collect(),
            }
        }
        K::Vector => {
            let kps = keypoints_of(obj, part);
            if kps.len() < 2 {
                let name = match part {
                    Some(p) => format!("{object}.{p}"),
                    None => object.to_string(),
                };
                return Err(ToolkitError::NoKeypoints(name));
            }
            span = kps[0].distance(&kps[1]);
            RepresentationValue::Vector {
                origin: kps[0],
                direction: UnitVector3::normalize(kps[1] - kps[0])
                    .map_err(|_| bad("coincident keypoints"))?,
            }
        }
        K::Pose => RepresentationValue::Pose {
            pose: pose_of(obj, part),
        },
        K::Region => crop_subimage(obs, object, part, opts.padding)?,
        K::StateMachine => extract_state(obs, object)?,
        K::TopoOrder => unreachable!("handled above"),
    };
    Ok((value, span))
}

fn gaussian3(r: &mut ChaCha8Rng, sigma: f64) -> Point3 {
    let x: f64 = r.sample(StandardNormal);
    let y: f64 = r.sample(StandardNormal);
    let z: f64 = r.sample(StandardNormal);
    Point3::new(x, y, z) * sigma
}

/// `span` is the keypoint distance behind a vector value.
fn apply_noise(
    v: &RepresentationValue,
    span: f64,
    noise: &NoiseModel,
    r: &mut ChaCha8Rng,
) -> RepresentationValue {
    let sp = noise.point_sigma();
    let sa = noise.angle_sigma();
    if sp == 0.0 && sa == 0.0 {
        return v.clone();
    }
    match v {
        RepresentationValue::Point { point } => RepresentationValue::Point {
            point: *point + gaussian3(r, sp),
        },
        RepresentationValue::PointSet { points } => RepresentationValue::PointSet {
            points: points
                .iter()
                .map(|p| LabeledPoint {
                    label: p.label.clone(),
                    point: p.point + gaussian3(r, sp),
                })
                .collect(),
        },
        RepresentationValue::Vector { origin, direction } => {
            // Both keypoints are perturbed, then the direction is re-normalized.
            let o = *origin + gaussian3(r, sp);
            let tip = *origin + direction.as_point() * span + gaussian3(r, sp);
            let tilted = Rotation::from_scaled_axis(gaussian3(r, sa)).apply(&(tip - o));
            RepresentationValue::Vector {
                origin: o,
                direction: UnitVector3::normalize(tilted).unwrap_or(*direction),
            }
        }
        RepresentationValue::Pose { pose } => RepresentationValue::Pose {
            pose: Pose::new(
                Rotation::from_scaled_axis(gaussian3(r, sa)).compose(&pose.rotation),
                pose.translation + gaussian3(r, sp),
            ),
        },
        other => other.clone(),
    }
}

/// Part box in the world frame, grown by `padding` on every side.
pub fn crop_subimage(
    obs: &Observation,
    object: &str,
    part: Option<&str>,
    padding: Padding,
) -> Result<RepresentationValue, ToolkitError> {
    let obj = find(obs, object)?;
    let (center, extent) = match part {
        Some(p) => {
            let sp = obj.part(p).ok_or_else(|| ToolkitError::UnknownPart {
                object: object.to_string(),
                part: p.to_string(),
            })?;
            (obj.pose.compose(&sp.local_pose), sp.extent)
        }
        None => (obj.pose, obj.extent),
    };
    let pad = match padding {
        Padding::Fixed(m) => m,
        Padding::Adaptive => {
            ADAPTIVE_PADDING_FRACTION * 2.0 * extent.iter().copied().fold(0.0, f64::max)
        }
    };
    Ok(RepresentationValue::Region {
        object: object.to_string(),
        part: part.map(str::to_string),
        center,
        half_extents: extent.map(|e| e + pad),
    })
}

/// Crop with `crop_tool`, then extract with `tool` inside the crop.
/// Elapsed time covers both calls; the record keeps the (object, part) tag.
pub fn extract_in_region(
    crop_tool: &ToolSpec,
    tool: &ToolSpec,
    obs: &Observation,
    object: &str,
    part: Option<&str>,
    opts: &ExtractOptions,
    seed: u64,
) -> Result<ExtractionRecord, ToolkitError> {
    let crop_target = match part {
        Some(p) => Target::part(object, p),
        None => Target::object(object),
    };
    let crop_opts = ExtractOptions {
        requirement: Some(RepresentationKind::Region),
        ..*opts
    };
    let crop = extract_with(
        crop_tool,
        obs,
        &crop_target,
        &crop_opts,
        rng::derive(seed, "crop", &[]),
    )?;
    let Some(region) = crop.value.clone() else {
        return Ok(ExtractionRecord {
            tool: tool.name.clone(),
            crop_tool: Some(crop_tool.name.clone()),
            ..crop
        });
    };
    let mut rec = extract_with(
        tool,
        obs,
        &Target::Region { region },
        opts,
        rng::derive(seed, "fine", &[]),
    )?;
    rec.crop_tool = Some(crop_tool.name.clone());
    rec.elapsed_s += crop.elapsed_s;
    Ok(rec)
}

/// Selects the best non-cropping tool for the requirement and runs it inside a
/// padded crop of the part.
pub fn extract_fine(
    reg: &Registry,
    obs: &Observation,
    object: &str,
    part: &str,
    requirement: RepresentationKind,
    p_succ: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<ExtractionRecord, ToolkitError> {
    let crop_tool = reg.crop_tool().ok_or(ToolkitError::Unsatisfiable {
        requirement: RepresentationKind::Region,
        available: reg.output_kinds(),
    })?;
    find(obs, object)?
        .part(part)
        .ok_or_else(|| ToolkitError::UnknownPart {
            object: object.to_string(),
            part: part.to_string(),
        })?;
    let tool = select_tool(reg, requirement, p_succ)?.tool;
    let opts = ExtractOptions {
        requirement: Some(requirement),
        ..ExtractOptions::default()
    };
    extract_in_region(crop_tool, tool, obs, object, Some(part), &opts, seed)
}

pub fn extract_state(obs: &Observation, object: &str) -> Result<RepresentationValue, ToolkitError> {
    let obj = find(obs, object)?;
    match (&obj.states, &obj.state) {
        (Some(_), Some(state)) => Ok(RepresentationValue::StateMachine {
            object: object.to_string(),
            state: state.clone(),
        }),
        _ => Err(ToolkitError::NoStateMachine(object.to_string())),
    }
}

/// Orders `ids` so that an object precedes everything it rests on, directly
/// or through other objects. Ties go to the smaller id.
pub fn extract_topo(
    obs: &Observation,
    ids: &[String],
) -> Result<RepresentationValue, ToolkitError> {
    let s = &obs.snapshot;
    for id in ids {
        find(obs, id)?;
    }
    let members: BTreeSet<&str> = ids.iter().map(|s| s.as_str()).collect();
    // below[x] = members that x rests on, transitively.
    let mut below: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for &m in &members {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = vec![m];
        while let Some(cur) = stack.pop() {
            let obj = s.object(cur).expect("chased support exists");
            for sup in &obj.supports {
                if sup == m {
                    return Err(ToolkitError::Cycle(ids.to_vec()));
                }
                if seen.insert(sup.as_str()) {
                    stack.push(sup.as_str());
                }
            }
        }
        below.insert(
            m,
            seen.into_iter().filter(|x| members.contains(x)).collect(),
        );
    }
    // Number of remaining members resting on each object.
    let mut above: BTreeMap<&str, usize> = members.iter().map(|&m| (m, 0)).collect();
    for set in below.values() {
        for &b in set {
            *above.get_mut(b).expect("member") += 1;
        }
    }
    let mut order = Vec::with_capacity(members.len());
    let mut remaining = members.clone();
    while !remaining.is_empty() {
        let next = *remaining
            .iter()
            .find(|m| above[*m] == 0)
            .ok_or_else(|| ToolkitError::Cycle(ids.to_vec()))?;
        remaining.remove(next);
        for &b in &below[next] {
            *above.get_mut(b).expect("member") -= 1;
        }
        order.push(next.to_string());
    }
    Ok(RepresentationValue::TopoOrder { order })
}
