//! Action-sequence generation: per-stage waypoint solving, stage-program
//! interpretation and representation tracking during motion.

mod exec;
mod program;
mod solver;
mod track;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exec::{
    generate_action_sequence, value_error, Accuracy, ExecConfig, ExecFailure, Execution, Executor,
    Flow, LogEntry, Module,
};
pub use program::{reorder_steps, stage_bindings, Branch, ProgramError, StageProgram, Step};
pub use solver::{
    build_waypoints, densify, solve_stage, Optimizer, RestartResult, SolveProblem, SolverConfig,
    StageSolution, PRE_HEIGHT,
};
pub use track::{track, TrackConfig, TrackReport, TrackTick};

/// How the end effector travels to a stage's terminal pose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionStyle {
    /// Lift, traverse at a safe height, descend onto the target.
    #[default]
    Approach,
    /// Straight-line interpolation (pulls, pushes).
    Direct,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("stale representation `{0}`")]
    StaleRepresentation(String),
    #[error("infeasible workspace: {0}")]
    InfeasibleWorkspace(String),
    #[error("waypoint {index} is {distance:.4} m from `{object}`, inside the collision margin")]
    Collision {
        index: usize,
        object: String,
        distance: f64,
    },
    #[error("constraint `{constraint}`: {message}")]
    Eval { constraint: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}
