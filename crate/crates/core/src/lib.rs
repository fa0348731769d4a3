//! Task-adaptive spatial representation extraction for tabletop manipulation.
//!
//! The pipeline grounds a natural-language instruction into per-stage tool
//! selections and scalar cost constraints ([`cog`]), extracts the required
//! representations from a simulated scene ([`toolkit`], [`scene`]), solves for
//! end-effector waypoints ([`planner`]) and scores randomized trials
//! ([`harness`]).

pub mod cog;
pub mod dsl;
pub mod geometry;
pub mod harness;
pub mod planner;
pub mod rng;
pub mod scene;
pub mod toolkit;

/// Directory holding the shipped registry, scenes, task scripts and benchmark config.
pub fn fixtures_dir() -> std::path::PathBuf {
    std::path::PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}
