use std::collections::BTreeMap;

use super::{DslError, DslErrorKind, Expr, Func, Span, Type, Var};
use crate::toolkit::RepresentationKind;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
}

fn syntax(pos: usize, message: impl Into<String>) -> DslError {
    DslError {
        kind: DslErrorKind::Syntax,
        pos,
        message: message.into(),
    }
}

fn type_err(pos: usize, message: impl Into<String>) -> DslError {
    DslError {
        kind: DslErrorKind::Type,
        pos,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, DslError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => {
                i += 1;
                out.push((Tok::LParen, Span { start, end: i }));
            }
            b')' => {
                i += 1;
                out.push((Tok::RParen, Span { start, end: i }));
            }
            b',' => {
                i += 1;
                out.push((Tok::Comma, Span { start, end: i }));
            }
            b'"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match bytes.get(i) {
                        None => return Err(syntax(start, "unterminated string")),
                        Some(b'"') => {
                            i += 1;
                            break;
                        }
                        Some(b'\\') => match bytes.get(i + 1) {
                            Some(b'"') => {
                                s.push('"');
                                i += 2;
                            }
                            Some(b'\\') => {
                                s.push('\\');
                                i += 2;
                            }
                            _ => return Err(syntax(i, "unsupported escape")),
                        },
                        Some(_) => {
                            let ch = text[i..].chars().next().expect("in bounds");
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                out.push((Tok::Str(s), Span { start, end: i }));
            }
            b'+' | b'-' | b'.' | b'0'..=b'9' => {
                if c == b'+' || c == b'-' {
                    i += 1;
                }
                let digits = |i: &mut usize| {
                    let s = *i;
                    while *i < bytes.len() && bytes[*i].is_ascii_digit() {
                        *i += 1;
                    }
                    *i - s
                };
                let mut n = digits(&mut i);
                if bytes.get(i) == Some(&b'.') {
                    i += 1;
                    n += digits(&mut i);
                }
                if n == 0 {
                    return Err(syntax(start, "malformed number"));
                }
                if matches!(bytes.get(i), Some(b'e' | b'E')) {
                    i += 1;
                    if matches!(bytes.get(i), Some(b'+' | b'-')) {
                        i += 1;
                    }
                    if digits(&mut i) == 0 {
                        return Err(syntax(start, "malformed exponent"));
                    }
                }
                let v: f64 = text[start..i]
                    .parse()
                    .map_err(|_| syntax(start, "malformed number"))?;
                if !v.is_finite() {
                    return Err(syntax(start, "number out of range"));
                }
                out.push((Tok::Num(v), Span { start, end: i }));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((
                    Tok::Ident(text[start..i].to_string()),
                    Span { start, end: i },
                ));
            }
            _ => {
                let ch = text[i..].chars().next().expect("in bounds");
                return Err(syntax(start, format!("unexpected character {ch:?}")));
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [(Tok, Span)],
    at: usize,
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&(Tok, Span)> {
        self.toks.get(self.at)
    }

    fn pos(&self) -> usize {
        self.peek().map(|t| t.1.start).unwrap_or(self.len)
    }

    fn expr(&mut self, depth: usize) -> Result<Expr, DslError> {
        if depth > 64 {
            return Err(syntax(self.pos(), "expression nested too deeply"));
        }
        let Some((tok, span)) = self.peek().cloned() else {
            return Err(syntax(self.len, "expected an expression"));
        };
        self.at += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v, span)),
            Tok::Str(s) => Ok(Expr::Str(s, span)),
            Tok::Ident(name) => {
                if matches!(self.peek(), Some((Tok::LParen, _))) {
                    self.at += 1;
                    let func = Func::from_name(&name)
                        .ok_or_else(|| syntax(span.start, format!("unknown function `{name}`")))?;
                    let mut args = Vec::new();
                    if matches!(self.peek(), Some((Tok::RParen, _))) {
                        self.at += 1;
                    } else {
                        loop {
                            args.push(self.expr(depth + 1)?);
                            match self.peek() {
                                Some((Tok::Comma, _)) => self.at += 1,
                                Some((Tok::RParen, _)) => {
                                    self.at += 1;
                                    break;
                                }
                                _ => return Err(syntax(self.pos(), "expected `,` or `)`")),
                            }
                        }
                    }
                    let end = self.toks[self.at - 1].1.end;
                    Ok(Expr::Call(
                        func,
                        args,
                        Span {
                            start: span.start,
                            end,
                        },
                    ))
                } else {
                    match name.as_str() {
                        "ee_pos" => Ok(Expr::Var(Var::EePos, span)),
                        "ee_rot" => Ok(Expr::Var(Var::EeRot, span)),
                        "ee_pose" => Ok(Expr::Var(Var::EePose, span)),
                        "x" => Ok(Expr::Axis(0, span)),
                        "y" => Ok(Expr::Axis(1, span)),
                        "z" => Ok(Expr::Axis(2, span)),
                        _ => Err(syntax(span.start, format!("unknown identifier `{name}`"))),
                    }
                }
            }
            Tok::LParen | Tok::RParen | Tok::Comma => {
                Err(syntax(span.start, "expected an expression"))
            }
        }
    }
}

/// Parses and type-checks a constraint. The result must be a scalar, and every
/// `rep("name")` must appear in `bindings` with a kind its use accepts.
pub fn parse_constraint(
    text: &str,
    bindings: &BTreeMap<String, RepresentationKind>,
) -> Result<Expr, DslError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(syntax(0, "empty expression"));
    }
    let mut p = Parser {
        toks: &toks,
        at: 0,
        len: text.len(),
    };
    let e = p.expr(0)?;
    if p.at < toks.len() {
        return Err(syntax(p.pos(), "unexpected trailing input"));
    }
    let t = check(&e, bindings)?;
    if t != Type::Scalar {
        return Err(type_err(
            0,
            format!("constraint must be a scalar, found {t}"),
        ));
    }
    Ok(e)
}

fn arity(name: Func, args: &[Expr], span: Span, min: usize, max: usize) -> Result<(), DslError> {
    let n = args.len();
    if n < min || n > max {
        let want = if min == max {
            format!("{min}")
        } else if max == usize::MAX {
            format!("at least {min}")
        } else {
            format!("{min} to {max}")
        };
        return Err(type_err(
            span.start,
            format!("{} expects {want} argument(s), got {n}", name.name()),
        ));
    }
    Ok(())
}

fn check(e: &Expr, kinds: &BTreeMap<String, RepresentationKind>) -> Result<Type, DslError> {
    use RepresentationKind as K;
    let (f, args, span) = match e {
        Expr::Num(..) => return Ok(Type::Scalar),
        Expr::Str(..) => return Ok(Type::Str),
        Expr::Axis(..) => return Ok(Type::Axis),
        Expr::Var(Var::EePos, _) => return Ok(Type::Vec3),
        Expr::Var(Var::EeRot, _) => return Ok(Type::Rotation),
        Expr::Var(Var::EePose, _) => return Ok(Type::Pose),
        Expr::Call(f, args, span) => (*f, args, *span),
    };
    let name = f.name();
    let expect = |i: usize, want: &str, ok: &dyn Fn(Type) -> bool| -> Result<Type, DslError> {
        let t = check(&args[i], kinds)?;
        if ok(t) {
            Ok(t)
        } else {
            Err(type_err(
                args[i].span().start,
                format!("{name} expects {want}, found {t}"),
            ))
        }
    };
    let is = |want: Type| move |t: Type| t == want;
    let rep_of =
        |allowed: &'static [K]| move |t: Type| matches!(t, Type::Rep(k) if allowed.contains(&k));
    const POSED: &[K] = &[K::Pose, K::Region];
    match f {
        Func::Add | Func::Sub => {
            if f == Func::Add {
                arity(f, args, span, 2, usize::MAX)?;
            } else {
                arity(f, args, span, 2, 2)?;
            }
            let t0 = expect(0, "scalars or vectors", &|t| {
                matches!(t, Type::Scalar | Type::Vec3)
            })?;
            for i in 1..args.len() {
                expect(i, &t0.to_string(), &is(t0))?;
            }
            Ok(t0)
        }
        Func::Max | Func::Min => {
            arity(f, args, span, 2, usize::MAX)?;
            for i in 0..args.len() {
                expect(i, "a scalar", &is(Type::Scalar))?;
            }
            Ok(Type::Scalar)
        }
        Func::Mul => {
            arity(f, args, span, 2, 2)?;
            let a = expect(0, "a scalar or vector", &|t| {
                matches!(t, Type::Scalar | Type::Vec3)
            })?;
            if a == Type::Vec3 {
                expect(1, "a scalar", &is(Type::Scalar))?;
                Ok(Type::Vec3)
            } else {
                expect(1, "a scalar or vector", &|t| {
                    matches!(t, Type::Scalar | Type::Vec3)
                })
            }
        }
        Func::Abs => {
            arity(f, args, span, 1, 1)?;
            expect(0, "a scalar", &is(Type::Scalar))
        }
        Func::Norm => {
            arity(f, args, span, 1, 1)?;
            expect(0, "a vector", &is(Type::Vec3))?;
            Ok(Type::Scalar)
        }
        Func::Dot | Func::AngleBetween | Func::Cross => {
            arity(f, args, span, 2, 2)?;
            expect(0, "a vector", &is(Type::Vec3))?;
            expect(1, "a vector", &is(Type::Vec3))?;
            Ok(if f == Func::Cross {
                Type::Vec3
            } else {
                Type::Scalar
            })
        }
        Func::Geodesic => {
            arity(f, args, span, 2, 2)?;
            expect(0, "a rotation", &is(Type::Rotation))?;
            expect(1, "a rotation", &is(Type::Rotation))?;
            Ok(Type::Scalar)
        }
        Func::Vec => {
            arity(f, args, span, 3, 3)?;
            for i in 0..3 {
                expect(i, "a scalar", &is(Type::Scalar))?;
            }
            Ok(Type::Vec3)
        }
        Func::Rep => {
            arity(f, args, span, 1, 1)?;
            match &args[0] {
                Expr::Str(s, sp) => match kinds.get(s) {
                    Some(k) => Ok(Type::Rep(*k)),
                    None => Err(DslError {
                        kind: DslErrorKind::Unbound,
                        pos: sp.start,
                        message: format!("representation `{s}` is not bound"),
                    }),
                },
                other => Err(type_err(other.span().start, "rep expects a string literal")),
            }
        }
        Func::PointOf => {
            arity(f, args, span, 1, 1)?;
            expect(
                0,
                "a point, point set, vector, pose or region representation",
                &rep_of(&[K::Point, K::PointSet, K::Vector, K::Pose, K::Region]),
            )?;
            Ok(Type::Vec3)
        }
        Func::AxisOf => {
            arity(f, args, span, 2, 2)?;
            expect(0, "a pose, rotation or pose/region representation", &|t| {
                matches!(t, Type::Pose | Type::Rotation) || rep_of(POSED)(t)
            })?;
            expect(1, "an axis (x, y or z)", &is(Type::Axis))?;
            Ok(Type::Vec3)
        }
        Func::TranslationOf | Func::RotationOf => {
            arity(f, args, span, 1, 1)?;
            expect(0, "a pose or pose/region representation", &|t| {
                t == Type::Pose || rep_of(POSED)(t)
            })?;
            Ok(if f == Func::TranslationOf {
                Type::Vec3
            } else {
                Type::Rotation
            })
        }
        Func::DirectionOf => {
            arity(f, args, span, 1, 1)?;
            expect(0, "a vector representation", &rep_of(&[K::Vector]))?;
            Ok(Type::Vec3)
        }
        Func::StateIs => {
            arity(f, args, span, 2, 2)?;
            expect(
                0,
                "a state machine representation",
                &rep_of(&[K::StateMachine]),
            )?;
            expect(1, "a state name string", &is(Type::Str))?;
            Ok(Type::Scalar)
        }
        Func::RankOf => {
            arity(f, args, span, 2, 2)?;
            expect(
                0,
                "a topological order representation",
                &rep_of(&[K::TopoOrder]),
            )?;
            expect(1, "an object id string", &is(Type::Str))?;
            Ok(Type::Scalar)
        }
    }
}

/// Canonical text form; parsing it yields a structurally equal expression.
pub fn pretty(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, &mut out);
    out
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Num(v, _) => out.push_str(&format!("{v:?}")),
        Expr::Str(s, _) => {
            out.push('"');
            for c in s.chars() {
                if c == '"' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('"');
        }
        Expr::Var(v, _) => out.push_str(match v {
            Var::EePos => "ee_pos",
            Var::EeRot => "ee_rot",
            Var::EePose => "ee_pose",
        }),
        Expr::Axis(i, _) => out.push_str(["x", "y", "z"][*i]),
        Expr::Call(f, args, _) => {
            out.push_str(f.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(a, out);
            }
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(pairs: &[(&str, RepresentationKind)]) -> BTreeMap<String, RepresentationKind> {
        pairs.iter().map(|(n, k)| (n.to_string(), *k)).collect()
    }

    #[test]
    fn norm_of_scalar_is_a_type_error_at_the_literal() {
        let err = parse_constraint("norm(5)", &BTreeMap::new()).unwrap_err();
        assert_eq!(err.kind, DslErrorKind::Type);
        assert_eq!(err.pos, 5);
    }

    #[test]
    fn unbound_rep_points_at_the_name() {
        let err = parse_constraint("norm(point_of(rep(\"red\")))", &BTreeMap::new()).unwrap_err();
        assert_eq!(err.kind, DslErrorKind::Unbound);
        assert_eq!(err.pos, 18);
    }

    #[test]
    fn syntax_errors_have_positions() {
        let k = BTreeMap::new();
        assert_eq!(parse_constraint("", &k).unwrap_err().pos, 0);
        assert_eq!(parse_constraint("abs(1", &k).unwrap_err().pos, 5);
        assert_eq!(parse_constraint("abs(1))", &k).unwrap_err().pos, 6);
        assert_eq!(parse_constraint("frob(1)", &k).unwrap_err().pos, 0);
        assert_eq!(parse_constraint("abs(1 $)", &k).unwrap_err().pos, 6);
    }

    #[test]
    fn rep_kinds_are_checked() {
        let k = kinds(&[("cat", RepresentationKind::Point)]);
        let err = parse_constraint("geodesic(rotation_of(rep(\"cat\")), ee_rot)", &k).unwrap_err();
        assert_eq!(err.kind, DslErrorKind::Type);
        assert_eq!(err.pos, 21);
    }

    #[test]
    fn pretty_round_trip() {
        let k = kinds(&[("a", RepresentationKind::Pose)]);
        let text =
            "add(norm(sub(ee_pos, vec(1, -2.5, 3e-2))), geodesic(rotation_of(rep(\"a\")), ee_rot))";
        let e = parse_constraint(text, &k).unwrap();
        let again = parse_constraint(&pretty(&e), &k).unwrap();
        assert_eq!(e, again);
    }
}
