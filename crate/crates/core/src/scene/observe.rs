use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SceneState;
use crate::rng;

/// Per-object, per-call occlusion probability.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionModel {
    pub p: f64,
    /// Occlusion only applies strictly after this simulated time.
    #[serde(default)]
    pub active_after: Option<f64>,
}

impl OcclusionModel {
    pub fn none() -> Self {
        OcclusionModel::default()
    }

    pub fn constant(p: f64) -> Self {
        OcclusionModel {
            p,
            active_after: None,
        }
    }
}

/// Reserved for rendered RGB-D channels. The simulator never fills it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RasterChannels {}

/// Structured snapshot standing in for a camera frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub snapshot: SceneState,
    pub occluded_ids: BTreeSet<String>,
    pub timestamp: f64,
    #[serde(default)]
    pub raster: Option<RasterChannels>,
}

impl Observation {
    /// An unoccluded view of the scene.
    pub fn clear(s: &SceneState) -> Self {
        Observation {
            snapshot: s.clone(),
            occluded_ids: BTreeSet::new(),
            timestamp: s.clock,
            raster: None,
        }
    }

    pub fn is_occluded(&self, id: &str) -> bool {
        self.occluded_ids.contains(id)
    }
}

/// One uniform draw per object in id order; an object is occluded when its
/// draw falls below `p`. Calls with the same seed share draws across `p`, so
/// the occluded set grows monotonically with `p`.
pub fn observe(s: &SceneState, model: &OcclusionModel, seed: u64) -> Observation {
    let mut r = rng::stream(seed, "occlusion", &[]);
    let active = match model.active_after {
        Some(t0) => s.clock > t0,
        None => true,
    };
    let mut ids: Vec<&str> = s.objects.iter().map(|o| o.id.as_str()).collect();
    ids.sort();
    let mut occluded_ids = BTreeSet::new();
    for id in ids {
        let u: f64 = r.random();
        if active && u < model.p {
            occluded_ids.insert(id.to_string());
        }
    }
    Observation {
        snapshot: s.clone(),
        occluded_ids,
        timestamp: s.clock,
        raster: None,
    }
}
