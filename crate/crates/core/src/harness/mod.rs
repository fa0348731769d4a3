//! Randomized-trial benchmark: ablation modes, noise and occlusion profiles,
//! failure classification and report emission.
//!
//! Failure categories follow the first log entry flagged `ok = false`:
//!
//! | module | category |
//! |---|---|
//! | grounding, binding diagnostics | `toolkit_extraction` |
//! | grounding, anything else | `planning` |
//! | toolkit | `toolkit_extraction` |
//! | tracking | `representation_tracking` |
//! | planner | `action_generation` |
//! | scene, or nothing flagged | `other` |

mod config;
mod report;
mod trial;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{AblationSettings, BenchConfig, Profile, ProfileSpec, TrialConfig};
pub use report::{render_table, BenchmarkReport, ConfigEcho, Summary, TaskSummary};
pub use trial::{classify_failure, run_benchmark, run_trial, PreparedTask, TrialResult, TrialRun};

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    NoCog,
    FixedSp,
    FixedVpv,
    NoCogFixedSp,
    NoCogFixedVpv,
}

/// Restricted extractor set of a fixed-extractor mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedSet {
    /// Center point only.
    Sp,
    /// Task point plus task vector.
    Vpv,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Full,
        AblationMode::NoCog,
        AblationMode::FixedSp,
        AblationMode::FixedVpv,
        AblationMode::NoCogFixedSp,
        AblationMode::NoCogFixedVpv,
    ];

    /// Grounding is one combined request.
    pub fn single_shot(self) -> bool {
        matches!(
            self,
            AblationMode::NoCog | AblationMode::NoCogFixedSp | AblationMode::NoCogFixedVpv
        )
    }

    pub fn fixed(self) -> Option<FixedSet> {
        match self {
            AblationMode::FixedSp | AblationMode::NoCogFixedSp => Some(FixedSet::Sp),
            AblationMode::FixedVpv | AblationMode::NoCogFixedVpv => Some(FixedSet::Vpv),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoCog => "no_cog",
            AblationMode::FixedSp => "fixed_sp",
            AblationMode::FixedVpv => "fixed_vpv",
            AblationMode::NoCogFixedSp => "no_cog_fixed_sp",
            AblationMode::NoCogFixedVpv => "no_cog_fixed_vpv",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = AblationMode::ALL.iter().map(|m| m.as_str()).collect();
                format!("unknown mode `{s}`; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Planning,
    ToolkitExtraction,
    RepresentationTracking,
    ActionGeneration,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::Planning,
        ErrorCategory::ToolkitExtraction,
        ErrorCategory::RepresentationTracking,
        ErrorCategory::ActionGeneration,
        ErrorCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Planning => "planning",
            ErrorCategory::ToolkitExtraction => "toolkit_extraction",
            ErrorCategory::RepresentationTracking => "representation_tracking",
            ErrorCategory::ActionGeneration => "action_generation",
            ErrorCategory::Other => "other",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Configuration problems. Task failures are trial results, not errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Script(#[from] crate::cog::ScriptError),
    #[error(transparent)]
    Toolkit(#[from] crate::toolkit::ToolkitError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
}
