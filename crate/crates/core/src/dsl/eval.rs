use std::borrow::Cow;
use std::collections::BTreeMap;

use thiserror::Error;

use super::{ConstraintFn, Expr, Func, Var};
use crate::geometry::{angle_between, Point3, Pose, Rotation};
use crate::toolkit::RepresentationValue;

/// Central-difference step for [`fd_gradient`].
pub const FD_STEP: f64 = 1e-5;

/// An extracted representation as seen by a constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundValue {
    pub value: RepresentationValue,
    /// End-effector pose at extraction time when the object is held rigidly.
    /// The value then moves with the candidate pose.
    pub carried_from: Option<Pose>,
}

impl BoundValue {
    pub fn fixed(value: RepresentationValue) -> Self {
        BoundValue {
            value,
            carried_from: None,
        }
    }

    pub fn carried(value: RepresentationValue, ee_at_extraction: Pose) -> Self {
        BoundValue {
            value,
            carried_from: Some(ee_at_extraction),
        }
    }

    /// The value as it would be with the end effector at `candidate`.
    pub fn resolve(&self, candidate: &Pose) -> Cow<'_, RepresentationValue> {
        match &self.carried_from {
            None => Cow::Borrowed(&self.value),
            Some(from) => Cow::Owned(self.value.transformed(&candidate.compose(&from.inverse()))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalContext {
    pub bindings: BTreeMap<String, BoundValue>,
}

impl EvalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: BoundValue) -> &mut Self {
        self.bindings.insert(name.into(), value);
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("representation `{0}` has no value")]
    Unbound(String),
    #[error("`{func}` cannot use a {found} value")]
    WrongValue { func: &'static str, found: String },
    #[error("expression evaluated to a non-finite value")]
    NonFinite,
    #[error("ill-typed expression reached the evaluator")]
    IllTyped,
}

enum V<'a> {
    S(f64),
    P3(Point3),
    R(Rotation),
    Pose(Pose),
    Rep(Cow<'a, RepresentationValue>),
    Str(&'a str),
    Axis(usize),
}

struct Env<'a> {
    ctx: &'a EvalContext,
    candidate: &'a Pose,
}

impl<'a> Env<'a> {
    fn eval(&self, e: &'a Expr) -> Result<V<'a>, EvalError> {
        Ok(match e {
            Expr::Num(v, _) => V::S(*v),
            Expr::Str(s, _) => V::Str(s),
            Expr::Axis(i, _) => V::Axis(*i),
            Expr::Var(Var::EePos, _) => V::P3(self.candidate.translation),
            Expr::Var(Var::EeRot, _) => V::R(self.candidate.rotation),
            Expr::Var(Var::EePose, _) => V::Pose(*self.candidate),
            Expr::Call(f, args, _) => self.call(*f, args)?,
        })
    }

    fn scalar(&self, e: &'a Expr) -> Result<f64, EvalError> {
        match self.eval(e)? {
            V::S(v) => Ok(v),
            _ => Err(EvalError::IllTyped),
        }
    }

    fn vec3(&self, e: &'a Expr) -> Result<Point3, EvalError> {
        match self.eval(e)? {
            V::P3(v) => Ok(v),
            _ => Err(EvalError::IllTyped),
        }
    }

    fn rot(&self, e: &'a Expr) -> Result<Rotation, EvalError> {
        match self.eval(e)? {
            V::R(r) => Ok(r),
            _ => Err(EvalError::IllTyped),
        }
    }

    fn pose_like(&self, func: Func, e: &'a Expr) -> Result<Pose, EvalError> {
        match self.eval(e)? {
            V::Pose(p) => Ok(p),
            V::R(r) => Ok(Pose::from_rotation(r)),
            V::Rep(r) => r.pose().ok_or_else(|| wrong(func, &r)),
            _ => Err(EvalError::IllTyped),
        }
    }

    fn call(&self, f: Func, args: &'a [Expr]) -> Result<V<'a>, EvalError> {
        Ok(match f {
            Func::Add | Func::Sub => {
                let first = self.eval(&args[0])?;
                let sign = if f == Func::Sub { -1.0 } else { 1.0 };
                match first {
                    V::S(mut acc) => {
                        for a in &args[1..] {
                            acc += sign * self.scalar(a)?;
                        }
                        V::S(acc)
                    }
                    V::P3(mut acc) => {
                        for a in &args[1..] {
                            acc = acc + self.vec3(a)? * sign;
                        }
                        V::P3(acc)
                    }
                    _ => return Err(EvalError::IllTyped),
                }
            }
            Func::Max | Func::Min => {
                let mut acc = self.scalar(&args[0])?;
                for a in &args[1..] {
                    let v = self.scalar(a)?;
                    acc = if f == Func::Max {
                        acc.max(v)
                    } else {
                        acc.min(v)
                    };
                }
                V::S(acc)
            }
            Func::Mul => match (self.eval(&args[0])?, self.eval(&args[1])?) {
                (V::S(a), V::S(b)) => V::S(a * b),
                (V::S(a), V::P3(v)) | (V::P3(v), V::S(a)) => V::P3(v * a),
                _ => return Err(EvalError::IllTyped),
            },
            Func::Abs => V::S(self.scalar(&args[0])?.abs()),
            Func::Norm => V::S(self.vec3(&args[0])?.norm()),
            Func::Dot => V::S(self.vec3(&args[0])?.dot(&self.vec3(&args[1])?)),
            Func::Cross => V::P3(self.vec3(&args[0])?.cross(&self.vec3(&args[1])?)),
            Func::AngleBetween => V::S(angle_between(&self.vec3(&args[0])?, &self.vec3(&args[1])?)),
            Func::Geodesic => V::S(self.rot(&args[0])?.geodesic(&self.rot(&args[1])?)),
            Func::Vec => V::P3(Point3::new(
                self.scalar(&args[0])?,
                self.scalar(&args[1])?,
                self.scalar(&args[2])?,
            )),
            Func::Rep => match &args[0] {
                Expr::Str(name, _) => {
                    let b = self
                        .ctx
                        .bindings
                        .get(name)
                        .ok_or_else(|| EvalError::Unbound(name.clone()))?;
                    V::Rep(b.resolve(self.candidate))
                }
                _ => return Err(EvalError::IllTyped),
            },
            Func::PointOf => match self.eval(&args[0])? {
                V::Rep(r) => V::P3(r.point().ok_or_else(|| wrong(f, &r))?),
                _ => return Err(EvalError::IllTyped),
            },
            Func::AxisOf => {
                let p = self.pose_like(f, &args[0])?;
                match self.eval(&args[1])? {
                    V::Axis(i) => V::P3(p.rotation.axis(i)),
                    _ => return Err(EvalError::IllTyped),
                }
            }
            Func::TranslationOf => V::P3(self.pose_like(f, &args[0])?.translation),
            Func::RotationOf => V::R(self.pose_like(f, &args[0])?.rotation),
            Func::DirectionOf => match self.eval(&args[0])? {
                V::Rep(r) => match r.as_ref() {
                    RepresentationValue::Vector { direction, .. } => V::P3(direction.as_point()),
                    _ => return Err(wrong(f, &r)),
                },
                _ => return Err(EvalError::IllTyped),
            },
            Func::StateIs => match (self.eval(&args[0])?, self.eval(&args[1])?) {
                (V::Rep(r), V::Str(want)) => match r.as_ref() {
                    RepresentationValue::StateMachine { state, .. } => {
                        V::S(if state == want { 0.0 } else { 1.0 })
                    }
                    _ => return Err(wrong(f, &r)),
                },
                _ => return Err(EvalError::IllTyped),
            },
            Func::RankOf => match (self.eval(&args[0])?, self.eval(&args[1])?) {
                (V::Rep(r), V::Str(id)) => match r.as_ref() {
                    RepresentationValue::TopoOrder { order } => {
                        V::S(order.iter().position(|o| *o == id).unwrap_or(order.len()) as f64)
                    }
                    _ => return Err(wrong(f, &r)),
                },
                _ => return Err(EvalError::IllTyped),
            },
        })
    }
}

fn wrong(func: Func, r: &RepresentationValue) -> EvalError {
    EvalError::WrongValue {
        func: func.name(),
        found: r.kind().to_string(),
    }
}

/// Evaluates a type-checked scalar expression with the end effector at `candidate`.
pub fn eval_expr(expr: &Expr, ctx: &EvalContext, candidate: &Pose) -> Result<f64, EvalError> {
    let env = Env { ctx, candidate };
    let v = env.scalar(expr)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

pub fn eval_constraint(
    f: &ConstraintFn,
    ctx: &EvalContext,
    candidate: &Pose,
) -> Result<f64, EvalError> {
    eval_expr(&f.expr, ctx, candidate)
}

/// Central-difference gradient in the local tangent space of `at`
/// (translation first, then rotation), using [`Pose::retract`].
pub fn fd_gradient<E>(
    mut f: impl FnMut(&Pose) -> Result<f64, E>,
    at: &Pose,
    h: f64,
) -> Result<[f64; 6], E> {
    let mut g = [0.0; 6];
    for (i, gi) in g.iter_mut().enumerate() {
        let mut d = [0.0; 6];
        d[i] = h;
        let plus = f(&at.retract(&d))?;
        d[i] = -h;
        let minus = f(&at.retract(&d))?;
        *gi = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

pub fn grad_fd(
    f: &ConstraintFn,
    ctx: &EvalContext,
    at: &Pose,
    h: f64,
) -> Result<[f64; 6], EvalError> {
    fd_gradient(|p| eval_constraint(f, ctx, p), at, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_constraint;
    use crate::toolkit::RepresentationKind;

    fn ctx_point(name: &str, p: Point3) -> (EvalContext, BTreeMap<String, RepresentationKind>) {
        let mut ctx = EvalContext::new();
        ctx.bind(
            name,
            BoundValue::fixed(RepresentationValue::Point { point: p }),
        );
        (ctx, [(name.to_string(), RepresentationKind::Point)].into())
    }

    #[test]
    fn point_distance() {
        let (ctx, kinds) = ctx_point("a", Point3::new(1.0, 2.0, 3.0));
        let e = parse_constraint("norm(sub(ee_pos, point_of(rep(\"a\"))))", &kinds).unwrap();
        let at = Pose::from_translation(Point3::new(1.0, 2.0, 0.0));
        assert!((eval_expr(&e, &ctx, &at).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fd_matches_analytic_for_distance() {
        let (ctx, kinds) = ctx_point("a", Point3::new(0.3, -0.2, 0.1));
        let e = parse_constraint("norm(sub(ee_pos, point_of(rep(\"a\"))))", &kinds).unwrap();
        let at = Pose::new(Rotation::rot_z(0.4), Point3::new(0.0, 0.1, 0.5));
        let g = fd_gradient(|p| eval_expr(&e, &ctx, p), &at, FD_STEP).unwrap();
        let d = at.translation - Point3::new(0.3, -0.2, 0.1);
        let analytic = d * (1.0 / d.norm());
        for (i, gi) in g[..3].iter().enumerate() {
            assert!((gi - analytic.component(i)).abs() < 1e-8);
        }
        for gi in &g[3..] {
            assert!(gi.abs() < 1e-8);
        }
    }

    #[test]
    fn carried_values_follow_the_candidate() {
        let grasp = Pose::from_translation(Point3::new(0.0, 0.0, 0.5));
        let mut ctx = EvalContext::new();
        ctx.bind(
            "obj",
            BoundValue::carried(
                RepresentationValue::Point {
                    point: Point3::new(0.0, 0.0, 0.45),
                },
                grasp,
            ),
        );
        let kinds = [("obj".to_string(), RepresentationKind::Point)].into();
        let e =
            parse_constraint("norm(sub(point_of(rep(\"obj\")), vec(1, 0, 0)))", &kinds).unwrap();
        let at = Pose::from_translation(Point3::new(1.0, 0.0, 0.05));
        assert!(eval_expr(&e, &ctx, &at).unwrap().abs() < 1e-12);
    }

    #[test]
    fn state_is_is_an_indicator() {
        let mut ctx = EvalContext::new();
        ctx.bind(
            "d",
            BoundValue::fixed(RepresentationValue::StateMachine {
                object: "drawer".into(),
                state: "open".into(),
            }),
        );
        let kinds = [("d".to_string(), RepresentationKind::StateMachine)].into();
        let at = Pose::identity();
        let open = parse_constraint("state_is(rep(\"d\"), \"open\")", &kinds).unwrap();
        let closed = parse_constraint("state_is(rep(\"d\"), \"closed\")", &kinds).unwrap();
        assert_eq!(eval_expr(&open, &ctx, &at).unwrap(), 0.0);
        assert_eq!(eval_expr(&closed, &ctx, &at).unwrap(), 1.0);
    }

    #[test]
    fn missing_value_is_reported() {
        let kinds = [("a".to_string(), RepresentationKind::Point)].into();
        let e = parse_constraint("norm(point_of(rep(\"a\")))", &kinds).unwrap();
        let err = eval_expr(&e, &EvalContext::new(), &Pose::identity()).unwrap_err();
        assert_eq!(err, EvalError::Unbound("a".into()));
    }
}
