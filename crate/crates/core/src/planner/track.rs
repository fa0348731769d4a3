use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::rng;
use crate::scene::{observe, OcclusionModel, SceneState};

/// Slack on tick times and budget comparisons.
const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    pub enabled: bool,
    /// Simulated seconds between re-extractions.
    pub period_s: f64,
    /// A representation whose last success is this old is stale.
    pub budget_s: f64,
    /// Stages tracked; all when absent.
    pub stages: Option<Vec<usize>>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            enabled: true,
            period_s: 0.5,
            budget_s: 1.0,
            stages: None,
        }
    }
}

impl TrackConfig {
    pub fn disabled() -> Self {
        TrackConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.period_s.is_nan() || self.period_s <= 0.0 {
            return Err(PlanError::Config("tracking period must be positive".into()));
        }
        if self.budget_s.is_nan() || self.budget_s < self.period_s {
            return Err(PlanError::Config(
                "staleness budget must be at least the period".into(),
            ));
        }
        Ok(())
    }

    pub fn tracks(&self, stage: usize) -> bool {
        self.enabled && self.stages.as_ref().is_none_or(|s| s.contains(&stage))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackTick {
    pub t: f64,
    pub object: String,
    pub ok: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub ticks: Vec<TrackTick>,
    /// Time the first representation went stale.
    pub stale_at: Option<f64>,
    pub stale_object: Option<String>,
}

impl TrackReport {
    pub fn is_stale(&self) -> bool {
        self.stale_at.is_some()
    }

    /// Re-extraction times, once per tick.
    pub fn tick_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for t in &self.ticks {
            if out.last() != Some(&t.t) {
                out.push(t.t);
            }
        }
        out
    }
}

/// State in effect at time `t` along an execution timeline.
fn state_at<'a>(start: &'a SceneState, timeline: &'a [SceneState], t: f64) -> &'a SceneState {
    timeline
        .iter()
        .take_while(|s| s.clock <= t + TIME_EPS)
        .last()
        .unwrap_or(start)
}

/// Re-extracts `objects` every period over `(start.clock, end]` and reports
/// the first time a representation's last successful extraction is at least
/// the budget old. `start` is the state at the beginning of the interval,
/// `timeline` the states after each waypoint.
///
/// A re-extraction fails exactly when the object is occluded in that tick's
/// observation. Every object counts as freshly extracted at `start.clock`.
pub fn track(
    cfg: &TrackConfig,
    start: &SceneState,
    timeline: &[SceneState],
    end: f64,
    objects: &[String],
    occlusion: &OcclusionModel,
    seed: u64,
) -> TrackReport {
    let mut report = TrackReport::default();
    if !cfg.enabled || objects.is_empty() {
        return report;
    }
    let t0 = start.clock;
    let mut last_ok: BTreeMap<&str, f64> = objects.iter().map(|o| (o.as_str(), t0)).collect();
    let mut k: u64 = 1;
    loop {
        let t = t0 + k as f64 * cfg.period_s;
        if t > end + TIME_EPS {
            break;
        }
        let mut snap = state_at(start, timeline, t).clone();
        snap.clock = t;
        let obs = observe(&snap, occlusion, rng::derive(seed, "track", &[k]));
        for (id, last) in last_ok.iter_mut() {
            let ok = !obs.is_occluded(id);
            report.ticks.push(TrackTick {
                t,
                object: id.to_string(),
                ok,
            });
            if ok {
                *last = t;
            } else if t - *last >= cfg.budget_s - TIME_EPS && report.stale_at.is_none() {
                report.stale_at = Some(t);
                report.stale_object = Some(id.to_string());
            }
        }
        if report.stale_at.is_some() {
            break;
        }
        k += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Point3, Pose};
    use crate::scene::{SceneObject, SimConfig};

    fn scene() -> SceneState {
        let obj: SceneObject = serde_json::from_value(serde_json::json!({
            "id": "a", "class": "block",
            "pose": {"quaternion": [1.0, 0.0, 0.0, 0.0], "translation": [0.0, 0.0, 0.02]},
            "extent": [0.02, 0.02, 0.02]
        }))
        .unwrap();
        let ws = Aabb::new(Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, 1.0, 1.0));
        SceneState {
            workspace: ws,
            placement: ws,
            objects: vec![obj],
            attached: None,
            ee_pose: Pose::identity(),
            clock: 0.0,
            sim: SimConfig::default(),
        }
    }

    #[test]
    fn tick_count_is_duration_over_period() {
        let s = scene();
        let r = track(
            &TrackConfig::default(),
            &s,
            &[],
            5.0,
            &["a".into()],
            &OcclusionModel::none(),
            1,
        );
        assert_eq!(r.tick_times().len(), 10);
        assert!(!r.is_stale());
    }

    #[test]
    fn full_occlusion_after_one_second_goes_stale_at_two() {
        let s = scene();
        let occ = OcclusionModel {
            p: 1.0,
            active_after: Some(1.0),
        };
        let r = track(
            &TrackConfig::default(),
            &s,
            &[],
            5.0,
            &["a".into()],
            &occ,
            1,
        );
        assert!((r.stale_at.unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(r.stale_object.as_deref(), Some("a"));
    }

    #[test]
    fn disabled_never_ticks() {
        let s = scene();
        let r = track(
            &TrackConfig::disabled(),
            &s,
            &[],
            5.0,
            &["a".into()],
            &OcclusionModel::constant(1.0),
            1,
        );
        assert!(r.ticks.is_empty() && !r.is_stale());
    }

    #[test]
    fn budget_below_period_is_rejected() {
        let cfg = TrackConfig {
            budget_s: 0.1,
            ..TrackConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
