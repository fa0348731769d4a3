use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AblationMode, HarnessError};
use crate::planner::ExecConfig;
use crate::scene::OcclusionModel;

/// Noise and occlusion applied to a trial. Motion occlusion affects only
/// re-extractions during motion; rest occlusion affects blocking extractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Profile {
    pub noise_scale: f64,
    pub rest_occlusion: f64,
    pub motion_occlusion: f64,
}

impl Default for Profile {
    fn default() -> Self {
        Profile {
            noise_scale: 1.0,
            rest_occlusion: 0.05,
            motion_occlusion: 0.05,
        }
    }
}

impl Profile {
    pub const NAMES: [&'static str; 3] = ["none", "default", "occluded"];

    pub fn named(name: &str) -> Option<Profile> {
        match name {
            "none" => Some(Profile {
                noise_scale: 0.0,
                rest_occlusion: 0.0,
                motion_occlusion: 0.0,
            }),
            "default" => Some(Profile::default()),
            "occluded" => Some(Profile {
                motion_occlusion: 0.4,
                ..Profile::default()
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(HarnessError::Invalid(
                "noise_scale must be finite and non-negative".into(),
            ));
        }
        for (name, p) in [
            ("rest_occlusion", self.rest_occlusion),
            ("motion_occlusion", self.motion_occlusion),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(HarnessError::Invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// `base` with this profile's noise and occlusion.
    pub fn apply(&self, base: &ExecConfig) -> ExecConfig {
        ExecConfig {
            noise_scale: self.noise_scale,
            rest_occlusion: OcclusionModel::constant(self.rest_occlusion),
            motion_occlusion: OcclusionModel::constant(self.motion_occlusion),
            ..base.clone()
        }
    }
}

/// A profile by name or spelled out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Custom(Profile),
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Named("default".into())
    }
}

impl ProfileSpec {
    pub fn resolve(&self) -> Result<Profile, HarnessError> {
        let p = match self {
            ProfileSpec::Named(n) => Profile::named(n).ok_or_else(|| {
                HarnessError::Invalid(format!(
                    "unknown profile `{n}`; expected one of {}",
                    Profile::NAMES.join(", ")
                ))
            })?,
            ProfileSpec::Custom(p) => p.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    /// Probability that a single-shot grounding response loses one field.
    /// A degradation model, not a measurement.
    pub no_cog_error_p: f64,
    pub sp_tools: Vec<String>,
    pub vpv_tools: Vec<String>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            no_cog_error_p: 0.15,
            sp_tools: vec!["CenterPointExtractor".into()],
            vpv_tools: vec![
                "VLMTaskPointExtractor".into(),
                "VLMTaskVectorExtractor".into(),
            ],
        }
    }
}

impl AblationSettings {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.no_cog_error_p) {
            return Err(HarnessError::Invalid(
                "no_cog_error_p must lie in [0, 1]".into(),
            ));
        }
        if self.sp_tools.is_empty() || self.vpv_tools.is_empty() {
            return Err(HarnessError::Invalid(
                "fixed tool sets must not be empty".into(),
            ));
        }
        Ok(())
    }
}

/// One task run for `trials` seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig {
    pub task: PathBuf,
    /// Overrides the scene named by the task script.
    pub scene: Option<PathBuf>,
    pub registry: PathBuf,
    pub mode: AblationMode,
    pub trials: usize,
    pub seed: u64,
    pub profile: Profile,
    pub ablation: AblationSettings,
    pub exec: ExecConfig,
}

impl TrialConfig {
    pub fn new(task: impl Into<PathBuf>, registry: impl Into<PathBuf>) -> Self {
        TrialConfig {
            task: task.into(),
            scene: None,
            registry: registry.into(),
            mode: AblationMode::Full,
            trials: 10,
            seed: 0,
            profile: Profile::default(),
            ablation: AblationSettings::default(),
            exec: ExecConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Invalid("trials must be at least 1".into()));
        }
        self.profile.validate()?;
        self.ablation.validate()?;
        self.exec.validate()?;
        Ok(())
    }
}

/// Benchmark file: a task suite run under one mode and profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Task scripts, relative to the config file.
    pub tasks: Vec<PathBuf>,
    pub registry: PathBuf,
    #[serde(default)]
    pub mode: AblationMode,
    /// Trials per task and repeat.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub profile: ProfileSpec,
    #[serde(default)]
    pub ablation: AblationSettings,
    #[serde(default)]
    pub exec: ExecConfig,
}

fn default_trials() -> usize {
    10
}

fn one() -> usize {
    1
}

impl BenchConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<BenchConfig, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Loads a config and resolves its paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<BenchConfig, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    /// Makes relative paths relative to `dir`.
    pub fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.registry);
        self.tasks.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.tasks.is_empty() {
            return Err(HarnessError::Invalid("no tasks".into()));
        }
        if self.trials == 0 || self.repeats == 0 {
            return Err(HarnessError::Invalid(
                "trials and repeats must be at least 1".into(),
            ));
        }
        self.profile.resolve()?;
        self.ablation.validate()?;
        self.exec.validate()?;
        Ok(())
    }

    pub fn trial_config(&self, task: &Path) -> Result<TrialConfig, HarnessError> {
        Ok(TrialConfig {
            task: task.to_path_buf(),
            scene: None,
            registry: self.registry.clone(),
            mode: self.mode,
            trials: self.trials,
            seed: self.seed,
            profile: self.profile.resolve()?,
            ablation: self.ablation.clone(),
            exec: self.exec.clone(),
        })
    }

    pub fn worker_count(&self) -> usize {
        match self.workers {
            0 => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            n => n,
        }
    }
}
