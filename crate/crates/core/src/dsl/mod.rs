//! Constraint cost expressions.
//!
//! Constraints are typed function-call expressions over bound spatial
//! representations and the end-effector decision pose. Each evaluates to a
//! scalar cost that is zero when the constraint is met.
//!
//! ```text
//! expr   = number | string | ident | ident "(" [ expr { "," expr } ] ")"
//! number = [ "+" | "-" ] digits [ "." digits ] [ ( "e" | "E" ) [ "+" | "-" ] digits ]
//! string = '"' { any char except '"' and '\' | '\"' | '\\' } '"'
//! ident  = ( letter | "_" ) { letter | digit | "_" }
//! ```
//!
//! Identifiers: `ee_pos` (vector), `ee_rot` (rotation), `ee_pose` (pose) and
//! the axis names `x`, `y`, `z`. Functions:
//!
//! | function | signature |
//! |---|---|
//! | `add`, `max`, `min` | 2+ scalars → scalar; `add` also 2+ vectors → vector |
//! | `sub` | scalar, scalar → scalar; vector, vector → vector |
//! | `mul` | scalar × scalar, scalar × vector, vector × scalar |
//! | `abs` | scalar → scalar |
//! | `norm` | vector → scalar |
//! | `dot`, `angle_between` | vector, vector → scalar |
//! | `cross` | vector, vector → vector |
//! | `geodesic` | rotation, rotation → scalar (radians) |
//! | `vec` | scalar, scalar, scalar → vector |
//! | `rep` | string literal → bound representation |
//! | `point_of` | point / point set / vector / pose / region rep → vector |
//! | `axis_of` | pose or region rep, pose or rotation; axis → vector |
//! | `translation_of` | pose or region rep, or pose → vector |
//! | `rotation_of` | pose or region rep, or pose → rotation |
//! | `direction_of` | vector rep → vector |
//! | `state_is` | state-machine rep, string → 0 if in that state, else 1 |
//! | `rank_of` | topological-order rep, object id string → position in the order (length if absent) |
//!
//! A representation bound to the object currently held in the gripper is
//! carried by the candidate pose: it is moved by `candidate ∘ grasp⁻¹`.

mod eval;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::toolkit::{Granularity, RepresentationKind, UtilityRow};

pub use eval::{
    eval_constraint, eval_expr, fd_gradient, grad_fd, BoundValue, EvalContext, EvalError, FD_STEP,
};
pub use parse::{parse_constraint, pretty};

/// Byte offsets `[start, end)` into the source text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    EePos,
    EeRot,
    EePose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Add,
    Sub,
    Mul,
    Max,
    Min,
    Abs,
    Norm,
    Dot,
    Cross,
    AngleBetween,
    Geodesic,
    PointOf,
    AxisOf,
    TranslationOf,
    RotationOf,
    Vec,
    Rep,
    DirectionOf,
    StateIs,
    RankOf,
}

impl Func {
    pub const ALL: [Func; 20] = [
        Func::Add,
        Func::Sub,
        Func::Mul,
        Func::Max,
        Func::Min,
        Func::Abs,
        Func::Norm,
        Func::Dot,
        Func::Cross,
        Func::AngleBetween,
        Func::Geodesic,
        Func::PointOf,
        Func::AxisOf,
        Func::TranslationOf,
        Func::RotationOf,
        Func::Vec,
        Func::Rep,
        Func::DirectionOf,
        Func::StateIs,
        Func::RankOf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Add => "add",
            Func::Sub => "sub",
            Func::Mul => "mul",
            Func::Max => "max",
            Func::Min => "min",
            Func::Abs => "abs",
            Func::Norm => "norm",
            Func::Dot => "dot",
            Func::Cross => "cross",
            Func::AngleBetween => "angle_between",
            Func::Geodesic => "geodesic",
            Func::PointOf => "point_of",
            Func::AxisOf => "axis_of",
            Func::TranslationOf => "translation_of",
            Func::RotationOf => "rotation_of",
            Func::Vec => "vec",
            Func::Rep => "rep",
            Func::DirectionOf => "direction_of",
            Func::StateIs => "state_is",
            Func::RankOf => "rank_of",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == s)
    }
}

/// Parsed expression. Equality compares structure and ignores spans.
#[derive(Clone, Debug)]
pub enum Expr {
    Num(f64, Span),
    Str(String, Span),
    Var(Var, Span),
    Axis(usize, Span),
    Call(Func, Vec<Expr>, Span),
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Num(_, s)
            | Expr::Str(_, s)
            | Expr::Var(_, s)
            | Expr::Axis(_, s)
            | Expr::Call(_, _, s) => *s,
        }
    }

    /// Names referenced through `rep("...")`, in first-use order.
    pub fn rep_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a str>) {
            if let Expr::Call(f, args, _) = e {
                if *f == Func::Rep {
                    if let Some(Expr::Str(s, _)) = args.first() {
                        if !out.contains(&s.as_str()) {
                            out.push(s);
                        }
                    }
                }
                for a in args {
                    walk(a, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Expr::Num(a, _), Expr::Num(b, _)) => a.to_bits() == b.to_bits(),
            (Expr::Str(a, _), Expr::Str(b, _)) => a == b,
            (Expr::Var(a, _), Expr::Var(b, _)) => a == b,
            (Expr::Axis(a, _), Expr::Axis(b, _)) => a == b,
            (Expr::Call(f, a, _), Expr::Call(g, b, _)) => f == g && a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pretty(self))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Type {
    Scalar,
    Vec3,
    Rotation,
    Pose,
    Rep(RepresentationKind),
    Str,
    Axis,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Scalar => f.write_str("scalar"),
            Type::Vec3 => f.write_str("vector"),
            Type::Rotation => f.write_str("rotation"),
            Type::Pose => f.write_str("pose"),
            Type::Rep(k) => write!(f, "{k} representation"),
            Type::Str => f.write_str("string"),
            Type::Axis => f.write_str("axis"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DslErrorKind {
    Syntax,
    Type,
    Unbound,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{} error at {pos}: {message}", match .kind { DslErrorKind::Syntax => "syntax", DslErrorKind::Type => "type", DslErrorKind::Unbound => "binding" })]
pub struct DslError {
    pub kind: DslErrorKind,
    /// Byte offset into the expression text.
    pub pos: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Evaluated at the stage's terminal waypoint.
    Subgoal,
    /// Evaluated along every densified waypoint.
    Path,
}

/// What a `rep("name")` refers to.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Binding {
    pub object: String,
    pub part: Option<String>,
    pub requirement: RepresentationKind,
    #[serde(default)]
    pub granularity: Granularity,
    /// Objects ordered together for a topological-order requirement.
    #[serde(default)]
    pub group: Vec<String>,
}

impl Binding {
    pub fn key(&self) -> BindingKey {
        BindingKey {
            object: self.object.clone(),
            part: self.part.clone(),
            requirement: self.requirement,
            granularity: self.granularity,
        }
    }
}

/// Identity of a representation request: one tool is selected per key.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BindingKey {
    pub object: String,
    pub part: Option<String>,
    pub requirement: RepresentationKind,
    pub granularity: Granularity,
}

impl fmt::Display for BindingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.part {
            Some(p) => write!(f, "{}.{}", self.object, p)?,
            None => write!(f, "{}", self.object)?,
        }
        write!(f, " [{}", self.requirement)?;
        if self.granularity == Granularity::Fine {
            f.write_str(", fine")?;
        }
        f.write_str("]")
    }
}

/// A tool chosen for one binding key, with the utility table behind the choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub key: BindingKey,
    pub tool: String,
    pub output: RepresentationKind,
    /// Region tool run first when the key asks for fine granularity.
    pub crop_tool: Option<String>,
    #[serde(default)]
    pub group: Vec<String>,
    pub table: Vec<UtilityRow>,
    /// True when no compatible tool existed and a fixed tool was imposed.
    #[serde(default)]
    pub forced: bool,
}

/// A compiled constraint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintFn {
    pub id: String,
    pub stage: usize,
    pub kind: ConstraintKind,
    #[serde(rename = "expr", serialize_with = "ser_expr")]
    pub expr: Expr,
    pub bindings: BTreeMap<String, Binding>,
    /// The natural-language constraint this implements.
    pub source_text: String,
}

fn ser_expr<S: serde::Serializer>(e: &Expr, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&pretty(e))
}

impl ConstraintFn {
    pub fn new(
        id: impl Into<String>,
        stage: usize,
        kind: ConstraintKind,
        text: &str,
        bindings: BTreeMap<String, Binding>,
        source_text: impl Into<String>,
    ) -> Result<Self, DslError> {
        let kinds = bindings
            .iter()
            .map(|(n, b)| (n.clone(), b.requirement))
            .collect();
        let expr = parse_constraint(text, &kinds)?;
        Ok(ConstraintFn {
            id: id.into(),
            stage,
            kind,
            expr,
            bindings,
            source_text: source_text.into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "diagnostic", rename_all = "snake_case")]
pub enum Diagnostic {
    MissingTool {
        constraint: String,
        binding: String,
        key: String,
    },
    KindMismatch {
        constraint: String,
        binding: String,
        tool: String,
        output: RepresentationKind,
        requirement: RepresentationKind,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::MissingTool {
                constraint,
                binding,
                key,
            } => write!(f, "{constraint}: binding `{binding}` ({key}) has no selected tool"),
            Diagnostic::KindMismatch {
                constraint,
                binding,
                tool,
                output,
                requirement,
            } => write!(
                f,
                "{constraint}: binding `{binding}` needs {requirement} but `{tool}` outputs {output}"
            ),
        }
    }
}

/// Checks every binding against the selected tools. Returns diagnostics rather than failing.
pub fn validate_bindings(f: &ConstraintFn, selections: &[Selection]) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (name, b) in &f.bindings {
        let key = b.key();
        match selections.iter().find(|s| s.key == key) {
            None => out.push(Diagnostic::MissingTool {
                constraint: f.id.clone(),
                binding: name.clone(),
                key: key.to_string(),
            }),
            Some(s) if !s.output.satisfies(b.requirement) => out.push(Diagnostic::KindMismatch {
                constraint: f.id.clone(),
                binding: name.clone(),
                tool: s.tool.clone(),
                output: s.output,
                requirement: b.requirement,
            }),
            Some(_) => {}
        }
    }
    out
}
