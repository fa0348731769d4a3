use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Registry, RepresentationKind, ToolSpec, ToolkitError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub tool: String,
    pub p_succ: f64,
    pub avg_time_s: f64,
    pub utility: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selected<'r> {
    pub tool: &'r ToolSpec,
    /// Every compatible tool in registry order.
    pub table: Vec<UtilityRow>,
}

pub fn utility(p_succ: f64, avg_time_s: f64, lambda: f64) -> f64 {
    p_succ - lambda * avg_time_s
}

/// Highest `p_succ − λ·avg_time_s` among tools whose output serves the
/// requirement. Ties go to the lower average time, then the smaller name.
/// Tools absent from `p_succ` are scored with probability 0.
pub fn select_tool<'r>(
    reg: &'r Registry,
    requirement: RepresentationKind,
    p_succ: &BTreeMap<String, f64>,
) -> Result<Selected<'r>, ToolkitError> {
    let mut best: Option<(&ToolSpec, f64)> = None;
    let mut table = Vec::new();
    for t in reg.tools.iter().filter(|t| t.output.satisfies(requirement)) {
        let p = p_succ.get(&t.name).copied().unwrap_or(0.0);
        let u = utility(p, t.avg_time_s, reg.lambda);
        table.push(UtilityRow {
            tool: t.name.clone(),
            p_succ: p,
            avg_time_s: t.avg_time_s,
            utility: u,
        });
        let better = match best {
            None => true,
            Some((b, bu)) => rank(u, t, bu, b) == Ordering::Less,
        };
        if better {
            best = Some((t, u));
        }
    }
    match best {
        Some((tool, _)) => Ok(Selected { tool, table }),
        None => Err(ToolkitError::Unsatisfiable {
            requirement,
            available: reg.output_kinds(),
        }),
    }
}

/// `Less` means `a` is preferred over `b`.
fn rank(ua: f64, a: &ToolSpec, ub: f64, b: &ToolSpec) -> Ordering {
    ub.total_cmp(&ua)
        .then(a.avg_time_s.total_cmp(&b.avg_time_s))
        .then_with(|| a.name.cmp(&b.name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolkit::registry::NoiseModel;
    use crate::toolkit::InputKind;

    fn tool(name: &str, h: f64) -> ToolSpec {
        ToolSpec {
            name: name.into(),
            inputs: vec![InputKind::Observation],
            output: RepresentationKind::Point,
            format: "xyz".into(),
            summary: String::new(),
            avg_time_s: h,
            invocations: 0,
            capabilities: vec![],
            noise: NoiseModel::None,
            latency: None,
            fine_scale: 0.2,
            occlusion_tolerant: false,
            extra: Default::default(),
        }
    }

    #[test]
    fn utility_trade_off() {
        let reg = Registry::new(vec![tool("A", 2.0), tool("B", 10.0)], 0.01).unwrap();
        let p: BTreeMap<String, f64> = [("A".into(), 0.9), ("B".into(), 0.95)].into();
        let s = select_tool(&reg, RepresentationKind::Point, &p).unwrap();
        assert_eq!(s.tool.name, "A");
        assert!((s.table[0].utility - 0.88).abs() < 1e-12);
        assert!((s.table[1].utility - 0.85).abs() < 1e-12);

        let reg0 = Registry::new(reg.tools.clone(), 0.0).unwrap();
        assert_eq!(
            select_tool(&reg0, RepresentationKind::Point, &p)
                .unwrap()
                .tool
                .name,
            "B"
        );
    }

    #[test]
    fn ties_prefer_faster_then_name() {
        let reg = Registry::new(vec![tool("b", 1.0), tool("a", 1.0), tool("c", 0.5)], 0.0).unwrap();
        let p: BTreeMap<String, f64> =
            [("a".into(), 0.5), ("b".into(), 0.5), ("c".into(), 0.5)].into();
        assert_eq!(
            select_tool(&reg, RepresentationKind::Point, &p)
                .unwrap()
                .tool
                .name,
            "c"
        );
        let reg = Registry::new(vec![tool("b", 1.0), tool("a", 1.0)], 0.0).unwrap();
        assert_eq!(
            select_tool(&reg, RepresentationKind::Point, &p)
                .unwrap()
                .tool
                .name,
            "a"
        );
    }

    #[test]
    fn unsatisfiable_lists_kinds() {
        let reg = Registry::new(vec![tool("A", 1.0)], 0.01).unwrap();
        let err = select_tool(&reg, RepresentationKind::Pose, &BTreeMap::new()).unwrap_err();
        assert_eq!(
            err.to_string(),
            "unsatisfiable requirement `pose`; registry provides [point]"
        );
    }
}
