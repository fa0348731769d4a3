use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RepresentationKind, ToolkitError};

/// Default accuracy/latency trade-off, per second of average execution time.
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Observation,
    ObjectList,
    Region,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    None,
    /// Independent N(0, σ²) per coordinate of every extracted point, meters.
    GaussianPoint { sigma: f64 },
    /// Rotation perturbed by exp of an N(0, σ²) tangent per axis, radians.
    GaussianAngle { sigma: f64 },
    /// Both of the above at once.
    Gaussian { point_sigma: f64, angle_sigma: f64 },
    /// The whole extraction fails with probability `p`.
    Dropout { p: f64 },
}

impl NoiseModel {
    /// The same model with every σ multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> NoiseModel {
        match *self {
            NoiseModel::GaussianPoint { sigma } => NoiseModel::GaussianPoint {
                sigma: sigma * factor,
            },
            NoiseModel::GaussianAngle { sigma } => NoiseModel::GaussianAngle {
                sigma: sigma * factor,
            },
            NoiseModel::Gaussian {
                point_sigma,
                angle_sigma,
            } => NoiseModel::Gaussian {
                point_sigma: point_sigma * factor,
                angle_sigma: angle_sigma * factor,
            },
            other => other,
        }
    }

    pub fn point_sigma(&self) -> f64 {
        match self {
            NoiseModel::GaussianPoint { sigma } => *sigma,
            NoiseModel::Gaussian { point_sigma, .. } => *point_sigma,
            _ => 0.0,
        }
    }

    pub fn angle_sigma(&self) -> f64 {
        match self {
            NoiseModel::GaussianAngle { sigma } => *sigma,
            NoiseModel::Gaussian { angle_sigma, .. } => *angle_sigma,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub mean_s: f64,
    #[serde(default)]
    pub jitter_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capability {
    /// Object class, or "*" for any class.
    pub class: String,
    pub requirement: RepresentationKind,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub inputs: Vec<InputKind>,
    pub output: RepresentationKind,
    pub format: String,
    pub summary: String,
    /// Running mean of observed execution time, seconds.
    pub avg_time_s: f64,
    /// Invocations folded into `avg_time_s`; 0 means the value is a prior.
    #[serde(default)]
    pub invocations: u64,
    #[serde(default)]
    pub capabilities: Vec<Capability>,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Defaults to `avg_time_s` with no jitter.
    #[serde(default)]
    pub latency: Option<LatencyModel>,
    /// σ multiplier applied when extracting inside a cropped region.
    #[serde(default = "default_fine_scale")]
    pub fine_scale: f64,
    #[serde(default)]
    pub occlusion_tolerant: bool,
    /// Unrecognized fields, kept so files round-trip.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn default_fine_scale() -> f64 {
    0.2
}

impl ToolSpec {
    /// Base success probability for an object class and requirement.
    pub fn capability(&self, class: &str, requirement: RepresentationKind) -> Option<f64> {
        let exact = self
            .capabilities
            .iter()
            .find(|c| c.class == class && c.requirement == requirement);
        exact
            .or_else(|| {
                self.capabilities
                    .iter()
                    .find(|c| c.class == "*" && c.requirement == requirement)
            })
            .map(|c| c.p)
    }

    pub fn latency_model(&self) -> LatencyModel {
        self.latency.unwrap_or(LatencyModel {
            mean_s: self.avg_time_s,
            jitter_s: 0.0,
        })
    }

    fn validate(&self) -> Result<(), ToolkitError> {
        let bad = |m: &str| ToolkitError::BadTool {
            tool: self.name.clone(),
            message: m.to_string(),
        };
        if self.name.is_empty() {
            return Err(bad("empty name"));
        }
        if !(self.avg_time_s >= 0.0 && self.avg_time_s.is_finite()) {
            return Err(bad("avg_time_s must be a finite non-negative number"));
        }
        for c in &self.capabilities {
            if !(0.0..=1.0).contains(&c.p) {
                return Err(ToolkitError::BadCapability {
                    tool: self.name.clone(),
                    message: format!(
                        "p = {} for ({}, {}) outside [0, 1]",
                        c.p, c.class, c.requirement
                    ),
                });
            }
            if c.class.is_empty() {
                return Err(ToolkitError::BadCapability {
                    tool: self.name.clone(),
                    message: "empty class".into(),
                });
            }
        }
        let mut keys = BTreeSet::new();
        for c in &self.capabilities {
            if !keys.insert((c.class.as_str(), c.requirement)) {
                return Err(ToolkitError::BadCapability {
                    tool: self.name.clone(),
                    message: format!("duplicate entry for ({}, {})", c.class, c.requirement),
                });
            }
        }
        match self.noise {
            NoiseModel::GaussianPoint { sigma } | NoiseModel::GaussianAngle { sigma }
                if sigma.is_nan() || sigma < 0.0 =>
            {
                return Err(bad("noise sigma must be non-negative"));
            }
            NoiseModel::Gaussian {
                point_sigma,
                angle_sigma,
            } if !(point_sigma >= 0.0 && angle_sigma >= 0.0) => {
                return Err(bad("noise sigma must be non-negative"));
            }
            NoiseModel::Dropout { p } if !(0.0..=1.0).contains(&p) => {
                return Err(bad("dropout p outside [0, 1]"));
            }
            _ => {}
        }
        if let Some(l) = self.latency {
            if !(l.mean_s >= 0.0 && l.jitter_s >= 0.0) {
                return Err(bad("latency must be non-negative"));
            }
        }
        if !(self.fine_scale > 0.0 && self.fine_scale <= 1.0) {
            return Err(bad("fine_scale must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    #[serde(default = "one")]
    pub schema: u32,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub tools: Vec<ToolSpec>,
}

fn one() -> u32 {
    1
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl Registry {
    pub fn new(tools: Vec<ToolSpec>, lambda: f64) -> Result<Self, ToolkitError> {
        let r = Registry {
            schema: 1,
            lambda,
            tools,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), ToolkitError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ToolkitError::BadTool {
                tool: "<registry>".into(),
                message: "lambda must be finite and non-negative".into(),
            });
        }
        let mut names = BTreeSet::new();
        for t in &self.tools {
            if !names.insert(t.name.as_str()) {
                return Err(ToolkitError::DuplicateTool(t.name.clone()));
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&ToolSpec, ToolkitError> {
        self.get(name)
            .ok_or_else(|| ToolkitError::UnknownTool(name.to_string()))
    }

    pub fn output_kinds(&self) -> Vec<RepresentationKind> {
        let set: BTreeSet<_> = self.tools.iter().map(|t| t.output).collect();
        set.into_iter().collect()
    }

    /// A registry holding only the named tools, in the given order.
    pub fn restricted(&self, names: &[&str]) -> Result<Registry, ToolkitError> {
        let tools = names
            .iter()
            .map(|n| self.require(n).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Registry {
            schema: self.schema,
            lambda: self.lambda,
            tools,
        })
    }

    /// The first tool producing cropped regions, if any.
    pub fn crop_tool(&self) -> Option<&ToolSpec> {
        self.tools
            .iter()
            .find(|t| t.output == RepresentationKind::Region)
    }

    /// Folds one observed execution time into the tool's running mean.
    pub fn update_history(&mut self, tool: &str, elapsed_s: f64) -> Result<(), ToolkitError> {
        if !elapsed_s.is_finite() || elapsed_s < 0.0 {
            return Err(ToolkitError::NegativeElapsed(elapsed_s));
        }
        let t = self
            .tools
            .iter_mut()
            .find(|t| t.name == tool)
            .ok_or_else(|| ToolkitError::UnknownTool(tool.to_string()))?;
        t.invocations += 1;
        t.avg_time_s += (elapsed_s - t.avg_time_s) / t.invocations as f64;
        Ok(())
    }
}

pub fn registry_load(path: impl AsRef<Path>) -> Result<Registry, ToolkitError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ToolkitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    registry_from_str(&text, &path.display().to_string())
}

pub fn registry_from_str(text: &str, origin: &str) -> Result<Registry, ToolkitError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let reg: Registry = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ToolkitError::Parse {
            path: origin.to_string(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    reg.validate()?;
    Ok(reg)
}
