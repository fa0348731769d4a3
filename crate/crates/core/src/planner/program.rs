use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsl::{Binding, ConstraintFn};
use crate::geometry::Gripper;
use crate::toolkit::RepresentationKind;

use super::MotionStyle;

/// Where a `query_state` branch continues.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The following step.
    Next,
    /// The step at this index, which must lie after the query.
    Goto(usize),
    /// Skip the rest of this stage.
    EndStage,
    /// Skip the rest of this stage and all later stages.
    EndTask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// Solve and execute the listed constraints (all conventional ones of the
    /// stage when empty). `object` tags the step for `reorder_by`.
    Solve {
        constraints: Vec<String>,
        #[serde(deserialize_with = "Option::deserialize")]
        object: Option<String>,
        gripper_end: Gripper,
        motion: MotionStyle,
    },
    /// Extract a state representation and branch on its value.
    QueryState {
        binding: String,
        branches: BTreeMap<String, Branch>,
    },
    /// Reorder the run of object-tagged steps that follows by a topological order.
    ReorderBy {
        binding: String,
    },
    Gripper {
        command: Gripper,
    },
}

/// Fixed-structure per-stage control flow. Jumps only go forward, so every
/// program terminates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageProgram {
    pub steps: Vec<Step>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("empty program")]
    Empty,
    #[error("step {step}: unknown constraint `{id}`")]
    UnknownConstraint { step: usize, id: String },
    #[error("step {step}: constraint `{id}` binds a {kind} representation, which the solver cannot consume")]
    NotSolvable {
        step: usize,
        id: String,
        kind: RepresentationKind,
    },
    #[error("step {step}: binding `{name}` is not a {expected} representation of this stage")]
    BadBinding {
        step: usize,
        name: String,
        expected: RepresentationKind,
    },
    #[error("step {step}: branch target {target} is not after the step (program has {len} steps)")]
    BackwardJump {
        step: usize,
        target: usize,
        len: usize,
    },
    #[error("step {step}: query has no branches")]
    NoBranches { step: usize },
    #[error("binding `{0}` names different representations in different constraints")]
    AmbiguousBinding(String),
}

/// Every binding of a stage by name.
pub fn stage_bindings(fns: &[ConstraintFn]) -> Result<BTreeMap<String, Binding>, ProgramError> {
    let mut out: BTreeMap<String, Binding> = BTreeMap::new();
    for f in fns {
        for (name, b) in &f.bindings {
            match out.get(name) {
                Some(prev) if prev != b => {
                    return Err(ProgramError::AmbiguousBinding(name.clone()))
                }
                Some(_) => {}
                None => {
                    out.insert(name.clone(), b.clone());
                }
            }
        }
    }
    Ok(out)
}

impl StageProgram {
    pub fn new(steps: Vec<Step>) -> Self {
        StageProgram { steps }
    }

    /// Static checks against the stage's compiled constraints.
    pub fn validate(&self, fns: &[ConstraintFn]) -> Result<(), ProgramError> {
        if self.steps.is_empty() {
            return Err(ProgramError::Empty);
        }
        let bindings = stage_bindings(fns)?;
        let len = self.steps.len();
        let binding_is =
            |step: usize, name: &str, kind: RepresentationKind| match bindings.get(name) {
                Some(b) if b.requirement == kind => Ok(()),
                _ => Err(ProgramError::BadBinding {
                    step,
                    name: name.to_string(),
                    expected: kind,
                }),
            };
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                Step::Solve { constraints, .. } => {
                    for id in constraints {
                        let f = fns.iter().find(|f| &f.id == id).ok_or_else(|| {
                            ProgramError::UnknownConstraint {
                                step: i,
                                id: id.clone(),
                            }
                        })?;
                        if let Some(b) = f
                            .bindings
                            .values()
                            .find(|b| !b.requirement.is_conventional())
                        {
                            return Err(ProgramError::NotSolvable {
                                step: i,
                                id: id.clone(),
                                kind: b.requirement,
                            });
                        }
                    }
                }
                Step::QueryState { binding, branches } => {
                    binding_is(i, binding, RepresentationKind::StateMachine)?;
                    if branches.is_empty() {
                        return Err(ProgramError::NoBranches { step: i });
                    }
                    for b in branches.values() {
                        if let Branch::Goto(target) = *b {
                            if target <= i || target > len {
                                return Err(ProgramError::BackwardJump {
                                    step: i,
                                    target,
                                    len,
                                });
                            }
                        }
                    }
                }
                Step::ReorderBy { binding } => {
                    binding_is(i, binding, RepresentationKind::TopoOrder)?
                }
                Step::Gripper { .. } => {}
            }
        }
        Ok(())
    }

    /// Constraint ids a `solve` step with an empty list stands for.
    pub fn default_solve_set(fns: &[ConstraintFn]) -> Vec<String> {
        fns.iter()
            .filter(|f| f.bindings.values().all(|b| b.requirement.is_conventional()))
            .map(|f| f.id.clone())
            .collect()
    }
}

/// Reorders the run of object-tagged steps starting at `from`: steps are
/// grouped by tag in first-appearance order, then groups are sorted by the
/// tag's position in `order`. Untagged steps end the run. Tags missing from
/// `order` keep their place after the ordered ones.
pub fn reorder_steps(steps: &mut [Step], from: usize, order: &[String]) {
    let tag = |s: &Step| match s {
        Step::Solve {
            object: Some(o), ..
        } => Some(o.clone()),
        _ => None,
    };
    let end = steps[from..]
        .iter()
        .position(|s| tag(s).is_none())
        .map(|p| from + p)
        .unwrap_or(steps.len());
    let run = &mut steps[from..end];
    let mut groups: Vec<(String, Vec<Step>)> = Vec::new();
    for s in run.iter() {
        let t = tag(s).expect("tagged run");
        match groups.iter_mut().find(|(g, _)| *g == t) {
            Some((_, v)) => v.push(s.clone()),
            None => groups.push((t, vec![s.clone()])),
        }
    }
    let rank = |t: &str| order.iter().position(|o| o == t).unwrap_or(usize::MAX);
    groups.sort_by_key(|(t, _)| rank(t));
    for (slot, s) in run.iter_mut().zip(groups.into_iter().flat_map(|(_, v)| v)) {
        *slot = s;
    }
}
