use std::convert::Infallible;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MotionStyle, PlanError};
use crate::dsl::{eval_constraint, fd_gradient, ConstraintFn, EvalContext};
use crate::geometry::{Aabb, Gripper, OrientedBox, Point3, Pose, Trajectory, Waypoint};
use crate::rng;

/// Height of the pre-grasp waypoint above the terminal pose.
pub const PRE_HEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Armijo-backtracking gradient descent on central-difference gradients.
    #[default]
    GradientDescent,
    /// Compass search along the six tangent directions with step halving.
    CoordinateRestart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub optimizer: Optimizer,
    pub max_iter: usize,
    /// First trial step length along the negative gradient.
    pub initial_step: f64,
    /// Longest tangent step taken in one iteration.
    pub max_step: f64,
    pub armijo: f64,
    pub backtrack: f64,
    /// Terminal subgoal cost at or below which a solve counts as converged.
    pub tol: f64,
    /// Perturbed starts tried after the unperturbed one.
    pub restarts: usize,
    pub restart_radius: f64,
    pub fd_step: f64,
    /// Interpolated samples per waypoint segment for path costs.
    pub densify: usize,
    pub subgoal_weight: f64,
    pub path_weight: f64,
    /// Rotation-only descent iterations per interior waypoint.
    pub smoothing_iter: usize,
    /// Skip remaining restarts once one reaches the early-exit cost.
    pub stop_on_converged: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            optimizer: Optimizer::GradientDescent,
            max_iter: 200,
            initial_step: 0.05,
            max_step: 0.5,
            armijo: 1e-4,
            backtrack: 0.5,
            tol: 1e-3,
            restarts: 4,
            restart_radius: 0.1,
            fd_step: 1e-5,
            densify: 4,
            subgoal_weight: 1.0,
            path_weight: 1.0,
            smoothing_iter: 20,
            stop_on_converged: false,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.to_string()));
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.initial_step > 0.0 && self.max_step > 0.0) {
            return bad("step lengths must be positive");
        }
        if !(0.0 < self.backtrack && self.backtrack < 1.0) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(self.tol > 0.0 && self.fd_step > 0.0) {
            return bad("tolerance and fd step must be positive");
        }
        if self.densify == 0 {
            return bad("densify must be positive");
        }
        if self.subgoal_weight < 0.0 || self.path_weight < 0.0 {
            return bad("weights must be non-negative");
        }
        Ok(())
    }

    /// Objective value that ends a descent early.
    pub fn early_exit(&self) -> f64 {
        self.tol * 1e-3
    }
}

/// One stage's optimization problem. The decision variable is the terminal
/// end-effector pose; intermediate waypoints follow from the motion style.
#[derive(Clone, Debug)]
pub struct SolveProblem<'a> {
    pub stage: usize,
    pub subgoals: Vec<&'a ConstraintFn>,
    pub paths: Vec<&'a ConstraintFn>,
    pub ctx: &'a EvalContext,
    pub start: Pose,
    pub workspace: Aabb,
    /// Non-target objects the end effector must keep `margin` away from.
    pub obstacles: Vec<(String, OrientedBox)>,
    pub margin: f64,
    /// Waypoints per stage.
    pub waypoints: usize,
    pub motion: MotionStyle,
    /// Traverse height for approach-style motion.
    pub safe_z: Option<f64>,
    pub gripper_end: Gripper,
}

impl<'a> SolveProblem<'a> {
    /// A problem with no obstacles, eight approach-style waypoints and a hold at the end.
    pub fn new(
        stage: usize,
        fns: &[&'a ConstraintFn],
        ctx: &'a EvalContext,
        start: Pose,
        workspace: Aabb,
    ) -> Self {
        use crate::dsl::ConstraintKind;
        SolveProblem {
            stage,
            subgoals: fns
                .iter()
                .copied()
                .filter(|f| f.kind == ConstraintKind::Subgoal)
                .collect(),
            paths: fns
                .iter()
                .copied()
                .filter(|f| f.kind == ConstraintKind::Path)
                .collect(),
            ctx,
            start,
            workspace,
            obstacles: Vec::new(),
            margin: 0.01,
            waypoints: 8,
            motion: MotionStyle::Approach,
            safe_z: None,
            gripper_end: Gripper::Hold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartResult {
    pub objective: f64,
    pub terminal_cost: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSolution {
    pub trajectory: Trajectory,
    /// Sum of subgoal costs at the terminal pose.
    pub terminal_cost: f64,
    /// Sum of path costs over the densified final waypoints.
    pub path_cost: f64,
    /// Best restart objective.
    pub objective: f64,
    pub converged: bool,
    pub restarts: Vec<RestartResult>,
    pub best_restart: usize,
}

/// Waypoints from `start` to `terminal`, ending at `terminal`.
///
/// Approach style lifts to the traverse height, crosses over the target,
/// descends to a pre-pose `PRE_HEIGHT` above it, then through a midpoint onto
/// it. Rotation is complete by the pre-pose. Direct style interpolates.
pub fn build_waypoints(
    start: &Pose,
    terminal: &Pose,
    motion: MotionStyle,
    count: usize,
    safe_z: Option<f64>,
) -> Vec<Pose> {
    let count = count.max(2);
    let lerp =
        |a: &Pose, b: &Pose, t: f64| Pose::interpolate(a, b, t.clamp(0.0, 1.0)).expect("t clamped");
    if motion == MotionStyle::Direct || count < 5 {
        let mut out: Vec<Pose> = (1..count)
            .map(|i| lerp(start, terminal, i as f64 / count as f64))
            .collect();
        out.push(*terminal);
        return out;
    }
    let pre_z = terminal.translation.z + PRE_HEIGHT;
    let z_hi = safe_z
        .unwrap_or(f64::NEG_INFINITY)
        .max(start.translation.z)
        .max(pre_z);
    let s = start.translation;
    let g = terminal.translation;
    let lift = Point3::new(s.x, s.y, z_hi);
    let over = Point3::new(g.x, g.y, z_hi);
    let pre = Point3::new(g.x, g.y, pre_z);
    let traverse = count - 4;
    let mut positions = vec![lift];
    for k in 1..=traverse {
        positions.push(lift.lerp(&over, k as f64 / traverse as f64));
    }
    positions.push(pre);
    positions.push(pre.lerp(&g, 0.5));
    positions.push(g);
    let turn_by = (count - 3) as f64;
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let t = ((i + 1) as f64 / turn_by).min(1.0);
            Pose::new(start.rotation.slerp(&terminal.rotation, t), *p)
        })
        .collect()
}

/// Samples `factor` poses per segment of `start → waypoints`, ending on each waypoint.
pub fn densify(start: &Pose, waypoints: &[Pose], factor: usize) -> Vec<Pose> {
    let mut out = Vec::with_capacity(waypoints.len() * factor);
    let mut prev = *start;
    for w in waypoints {
        for k in 1..=factor {
            out.push(Pose::interpolate(&prev, w, k as f64 / factor as f64).expect("t in range"));
        }
        prev = *w;
    }
    out
}

struct Objective<'p, 'a> {
    p: &'p SolveProblem<'a>,
    cfg: &'p SolverConfig,
}

impl Objective<'_, '_> {
    fn subgoal(&self, t: &Pose) -> f64 {
        let mut sum = 0.0;
        for f in &self.p.subgoals {
            match eval_constraint(f, self.p.ctx, t) {
                Ok(v) => sum += v,
                Err(_) => return f64::INFINITY,
            }
        }
        sum
    }

    fn path_over(&self, poses: &[Pose]) -> f64 {
        let mut sum = 0.0;
        for w in poses {
            for f in &self.p.paths {
                match eval_constraint(f, self.p.ctx, w) {
                    Ok(v) => sum += v,
                    Err(_) => return f64::INFINITY,
                }
            }
        }
        sum
    }

    fn waypoints(&self, t: &Pose) -> Vec<Pose> {
        build_waypoints(
            &self.p.start,
            t,
            self.p.motion,
            self.p.waypoints,
            self.p.safe_z,
        )
    }

    /// Weighted objective without feasibility; used for gradients.
    fn raw(&self, t: &Pose) -> f64 {
        let mut v = self.cfg.subgoal_weight * self.subgoal(t);
        if !self.p.paths.is_empty() {
            let dense = densify(&self.p.start, &self.waypoints(t), self.cfg.densify);
            v += self.cfg.path_weight * self.path_over(&dense);
        }
        v
    }

    /// Objective with infeasible terminals mapped to +∞.
    fn feasible(&self, t: &Pose) -> f64 {
        if first_violation(self.p, &self.waypoints(t)).is_some() {
            return f64::INFINITY;
        }
        self.raw(t)
    }
}

/// First waypoint outside the workspace or within the margin of an obstacle.
fn first_violation(p: &SolveProblem<'_>, wps: &[Pose]) -> Option<PlanError> {
    for (index, w) in wps.iter().enumerate() {
        let q = w.translation;
        if !p.workspace.contains(&q) {
            return Some(PlanError::InfeasibleWorkspace(format!(
                "waypoint {index} at {q} is outside the workspace"
            )));
        }
        for (id, b) in &p.obstacles {
            let d = b.distance_to(&q);
            if d < p.margin {
                return Some(PlanError::Collision {
                    index,
                    object: id.clone(),
                    distance: d,
                });
            }
        }
    }
    None
}

fn norm2(g: &[f64; 6]) -> f64 {
    g.iter().map(|v| v * v).sum()
}

fn scaled(g: &[f64; 6], a: f64) -> [f64; 6] {
    g.map(|v| -a * v)
}

/// Armijo-backtracking descent. `f` is the accepted objective, `grad_of` the
/// smooth one differentiated by central differences.
fn gradient_descent(
    f: &dyn Fn(&Pose) -> f64,
    grad_of: &dyn Fn(&Pose) -> f64,
    x0: Pose,
    cfg: &SolverConfig,
    mask: [bool; 6],
) -> (Pose, f64, usize) {
    let mut x = x0;
    let mut fx = f(&x);
    let mut alpha = cfg.initial_step;
    let mut it = 0;
    while it < cfg.max_iter && fx > cfg.early_exit() {
        it += 1;
        let Ok::<_, Infallible>(mut g) = fd_gradient(|p| Ok(grad_of(p)), &x, cfg.fd_step);
        for (gi, keep) in g.iter_mut().zip(mask) {
            if !keep {
                *gi = 0.0;
            }
        }
        let gn2 = norm2(&g);
        if !gn2.is_finite() || gn2 <= 1e-30 {
            break;
        }
        let mut a = (alpha * 2.0).min(cfg.max_step / gn2.sqrt());
        let mut accepted = None;
        while a >= 1e-14 {
            let cand = x.retract(&scaled(&g, a));
            let fc = f(&cand);
            if fc <= fx - cfg.armijo * a * gn2 {
                accepted = Some((cand, fc));
                break;
            }
            a *= cfg.backtrack;
        }
        match accepted {
            Some((cand, fc)) => {
                x = cand;
                fx = fc;
                alpha = a;
            }
            None => break,
        }
    }
    (x, fx, it)
}

/// Compass search: try ±step on each tangent axis, halve when nothing improves.
fn coordinate_search(
    f: &dyn Fn(&Pose) -> f64,
    x0: Pose,
    cfg: &SolverConfig,
    mask: [bool; 6],
) -> (Pose, f64, usize) {
    let mut x = x0;
    let mut fx = f(&x);
    let mut step = cfg.initial_step;
    let mut it = 0;
    while it < cfg.max_iter && fx > cfg.early_exit() && step > 1e-12 {
        it += 1;
        let mut improved = false;
        for axis in (0..6).filter(|&i| mask[i]) {
            for sign in [1.0, -1.0] {
                let mut d = [0.0; 6];
                d[axis] = sign * step;
                let cand = x.retract(&d);
                let fc = f(&cand);
                if fc < fx {
                    x = cand;
                    fx = fc;
                    improved = true;
                    break;
                }
            }
        }
        if improved {
            step = (step * 2.0).min(cfg.max_step);
        } else {
            step *= cfg.backtrack;
        }
    }
    (x, fx, it)
}

fn minimize(
    f: &dyn Fn(&Pose) -> f64,
    grad_of: &dyn Fn(&Pose) -> f64,
    x0: Pose,
    cfg: &SolverConfig,
    mask: [bool; 6],
) -> (Pose, f64, usize) {
    match cfg.optimizer {
        Optimizer::GradientDescent => gradient_descent(f, grad_of, x0, cfg, mask),
        Optimizer::CoordinateRestart => coordinate_search(f, x0, cfg, mask),
    }
}

/// Every binding a problem's costs read.
fn check_resolvable(p: &SolveProblem<'_>) -> Result<(), PlanError> {
    for f in p.subgoals.iter().chain(&p.paths) {
        for name in f.bindings.keys() {
            if !p.ctx.bindings.contains_key(name) {
                return Err(PlanError::StaleRepresentation(name.clone()));
            }
        }
    }
    Ok(())
}

/// Optimizes the terminal pose over restarts, then smooths interior waypoint
/// rotations against path costs.
pub fn solve_stage(p: &SolveProblem<'_>, cfg: &SolverConfig) -> Result<StageSolution, PlanError> {
    cfg.validate()?;
    if p.waypoints < 2 {
        return Err(PlanError::Config(
            "a stage needs at least two waypoints".into(),
        ));
    }
    if p.workspace.is_inverted() {
        return Err(PlanError::InfeasibleWorkspace(
            "workspace bounds are inverted".into(),
        ));
    }
    check_resolvable(p)?;
    let obj = Objective { p, cfg };
    let feasible = |t: &Pose| obj.feasible(t);
    let raw = |t: &Pose| obj.raw(t);

    let mut r = rng::stream(cfg.seed, "restarts", &[p.stage as u64]);
    let mut results = Vec::new();
    let mut best: Option<(usize, Pose, f64)> = None;
    for k in 0..=cfg.restarts {
        let x0 = if k == 0 {
            p.start
        } else {
            let d = random_in_ball(&mut r, cfg.restart_radius);
            Pose::new(p.start.rotation, p.start.translation + d)
        };
        let (x, fx, iterations) = if feasible(&x0).is_finite() {
            minimize(&feasible, &raw, x0, cfg, [true; 6])
        } else {
            (x0, f64::INFINITY, 0)
        };
        results.push(RestartResult {
            objective: fx,
            terminal_cost: obj.subgoal(&x),
            iterations,
        });
        if fx.is_finite() && best.as_ref().is_none_or(|b| fx < b.2) {
            best = Some((k, x, fx));
        }
        if cfg.stop_on_converged && fx <= cfg.early_exit() {
            break;
        }
    }
    let Some((best_restart, terminal, objective)) = best else {
        let wps = obj.waypoints(&p.start);
        return Err(first_violation(p, &wps).unwrap_or_else(|| {
            PlanError::InfeasibleWorkspace("no restart reached a feasible terminal pose".into())
        }));
    };

    let mut poses = obj.waypoints(&terminal);
    if !p.paths.is_empty() && cfg.smoothing_iter > 0 {
        let smooth_cfg = SolverConfig {
            max_iter: cfg.smoothing_iter,
            ..cfg.clone()
        };
        let n = poses.len();
        for pose in poses.iter_mut().take(n.saturating_sub(1)) {
            let at = |q: &Pose| obj.path_over(std::slice::from_ref(q));
            let (q, _, _) = minimize(
                &at,
                &at,
                *pose,
                &smooth_cfg,
                [false, false, false, true, true, true],
            );
            *pose = q;
        }
    }
    if let Some(e) = first_violation(p, &poses) {
        return Err(e);
    }

    let mut terminal_cost = 0.0;
    for f in &p.subgoals {
        terminal_cost += eval_constraint(f, p.ctx, &terminal).map_err(|e| PlanError::Eval {
            constraint: f.id.clone(),
            message: e.to_string(),
        })?;
    }
    let path_cost = obj.path_over(&densify(&p.start, &poses, cfg.densify));
    let n = poses.len();
    let waypoints = poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| Waypoint {
            pose,
            gripper: if i + 1 == n {
                p.gripper_end
            } else {
                Gripper::Hold
            },
        })
        .collect();
    Ok(StageSolution {
        trajectory: Trajectory::new(p.stage.max(1), waypoints)
            .map_err(|e| PlanError::Config(e.to_string()))?,
        terminal_cost,
        path_cost,
        objective,
        converged: terminal_cost <= cfg.tol,
        restarts: results,
        best_restart,
    })
}

fn random_in_ball(r: &mut impl Rng, radius: f64) -> Point3 {
    loop {
        let v = Point3::new(
            r.random_range(-1.0..=1.0),
            r.random_range(-1.0..=1.0),
            r.random_range(-1.0..=1.0),
        );
        if v.norm() <= 1.0 {
            return v * radius;
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::dsl::{eval_constraint, BoundValue, ConstraintKind};
    use crate::geometry::Rotation;
    use crate::toolkit::{RepresentationKind, RepresentationValue};

    fn workspace() -> Aabb {
        Aabb::new(Point3::new(-2.0, -2.0, 0.0), Point3::new(2.0, 2.0, 2.0))
    }

    fn goal_fn(text: &str, kind: RepresentationKind) -> ConstraintFn {
        let b = crate::dsl::Binding {
            object: "g".into(),
            part: None,
            requirement: kind,
            granularity: Default::default(),
            group: vec![],
        };
        ConstraintFn::new(
            "c",
            1,
            ConstraintKind::Subgoal,
            text,
            BTreeMap::from([("g".into(), b)]),
            "",
        )
        .unwrap()
    }

    fn point_ctx(p: Point3) -> EvalContext {
        let mut ctx = EvalContext::new();
        ctx.bind(
            "g",
            BoundValue::fixed(RepresentationValue::Point { point: p }),
        );
        ctx
    }

    #[test]
    fn reaches_point_goal_from_a_meter_away() {
        let g = Point3::new(0.3, 0.2, 0.5);
        let f = goal_fn(
            r#"norm(sub(ee_pos, point_of(rep("g"))))"#,
            RepresentationKind::Point,
        );
        let ctx = point_ctx(g);
        let start = Pose::from_translation(g + Point3::new(-0.6, 0.8, 0.0));
        let p = SolveProblem::new(1, &[&f], &ctx, start, workspace());
        let sol = solve_stage(&p, &SolverConfig::default()).unwrap();
        let end = sol.trajectory.last().pose.translation;
        assert!(end.distance(&g) < 1e-3, "{}", end.distance(&g));
        assert!(sol.converged);
        assert_eq!(sol.trajectory.waypoints().len(), 8);
        let reeval = eval_constraint(&f, &ctx, &sol.trajectory.last().pose).unwrap();
        assert!((reeval - sol.terminal_cost).abs() < 1e-9);
    }

    #[test]
    fn satisfied_start_stays_put() {
        let g = Point3::new(0.1, 0.1, 0.3);
        let f = goal_fn(
            r#"norm(sub(ee_pos, point_of(rep("g"))))"#,
            RepresentationKind::Point,
        );
        let ctx = point_ctx(g);
        let start = Pose::from_translation(g);
        let sol = solve_stage(
            &SolveProblem::new(1, &[&f], &ctx, start, workspace()),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(sol.trajectory.last().pose.approx_eq(&start, 1e-12));
        assert_eq!(sol.terminal_cost, 0.0);
    }

    #[test]
    fn reaches_orientation_goal() {
        let target = Rotation::rot_z(0.8).compose(&Rotation::rot_x(0.4));
        let f = goal_fn(
            r#"geodesic(ee_rot, rotation_of(rep("g")))"#,
            RepresentationKind::Pose,
        );
        let mut ctx = EvalContext::new();
        ctx.bind(
            "g",
            BoundValue::fixed(RepresentationValue::Pose {
                pose: Pose::new(target, Point3::ORIGIN),
            }),
        );
        let start = Pose::from_translation(Point3::new(0.0, 0.0, 0.5));
        let sol = solve_stage(
            &SolveProblem::new(1, &[&f], &ctx, start, workspace()),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(sol.trajectory.last().pose.rotation.geodesic(&target) < 1e-2);
        assert!(sol.terminal_cost <= 1e-3);
    }

    #[test]
    fn best_restart_has_minimum_objective() {
        let g = Point3::new(0.5, -0.4, 0.2);
        let f = goal_fn(
            r#"norm(sub(ee_pos, point_of(rep("g"))))"#,
            RepresentationKind::Point,
        );
        let ctx = point_ctx(g);
        let start = Pose::from_translation(Point3::new(0.0, 0.0, 0.6));
        let cfg = SolverConfig {
            max_iter: 5,
            ..SolverConfig::default()
        };
        let sol =
            solve_stage(&SolveProblem::new(1, &[&f], &ctx, start, workspace()), &cfg).unwrap();
        let min = sol
            .restarts
            .iter()
            .map(|r| r.objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(sol.objective, min);
        assert_eq!(sol.restarts[sol.best_restart].objective, min);
        assert_eq!(sol.restarts.len(), cfg.restarts + 1);
    }

    #[test]
    fn quadratic_converges_linearly() {
        let g = Point3::new(0.4, 0.3, 0.7);
        let f = goal_fn(
            r#"dot(sub(ee_pos, point_of(rep("g"))), sub(ee_pos, point_of(rep("g"))))"#,
            RepresentationKind::Point,
        );
        let ctx = point_ctx(g);
        let start = Pose::from_translation(Point3::new(-0.5, -0.2, 0.3));
        let c0 = eval_constraint(&f, &ctx, &start).unwrap();
        let cfg = SolverConfig {
            max_iter: 100,
            restarts: 0,
            ..SolverConfig::default()
        };
        let sol =
            solve_stage(&SolveProblem::new(1, &[&f], &ctx, start, workspace()), &cfg).unwrap();
        assert!(sol.terminal_cost < 1e-6 * c0);
    }

    #[test]
    fn coordinate_search_also_converges() {
        let g = Point3::new(0.2, 0.1, 0.4);
        let f = goal_fn(
            r#"norm(sub(ee_pos, point_of(rep("g"))))"#,
            RepresentationKind::Point,
        );
        let ctx = point_ctx(g);
        let cfg = SolverConfig {
            optimizer: Optimizer::CoordinateRestart,
            ..SolverConfig::default()
        };
        let start = Pose::from_translation(Point3::new(0.0, 0.0, 0.5));
        let sol =
            solve_stage(&SolveProblem::new(1, &[&f], &ctx, start, workspace()), &cfg).unwrap();
        assert!(sol.converged);
    }

    #[test]
    fn waypoints_keep_margin_from_obstacles() {
        let g = Point3::new(0.4, 0.0, 0.05);
        let f = goal_fn(
            r#"norm(sub(ee_pos, point_of(rep("g"))))"#,
            RepresentationKind::Point,
        );
        let ctx = point_ctx(g);
        let start = Pose::from_translation(Point3::new(-0.4, 0.0, 0.05));
        let wall = OrientedBox {
            pose: Pose::from_translation(Point3::new(0.0, 0.0, 0.1)),
            half_extents: [0.05, 0.3, 0.1],
        };
        let mut p = SolveProblem::new(1, &[&f], &ctx, start, workspace());
        p.obstacles = vec![("wall".into(), wall)];
        p.safe_z = Some(0.3);
        let sol = solve_stage(&p, &SolverConfig::default()).unwrap();
        for w in sol.trajectory.waypoints() {
            assert!(wall.distance_to(&w.pose.translation) >= p.margin);
        }
        assert!(sol.converged);
    }

    #[test]
    fn unbound_representation_is_stale() {
        let f = goal_fn(
            r#"norm(sub(ee_pos, point_of(rep("g"))))"#,
            RepresentationKind::Point,
        );
        let ctx = EvalContext::new();
        let p = SolveProblem::new(1, &[&f], &ctx, Pose::identity(), workspace());
        assert_eq!(
            solve_stage(&p, &SolverConfig::default()).unwrap_err(),
            PlanError::StaleRepresentation("g".into())
        );
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        let g = Point3::new(0.3, -0.3, 0.4);
        let f = goal_fn(
            r#"norm(sub(ee_pos, point_of(rep("g"))))"#,
            RepresentationKind::Point,
        );
        let ctx = point_ctx(g);
        let start = Pose::from_translation(Point3::new(0.0, 0.0, 0.5));
        let run = || {
            let sol = solve_stage(
                &SolveProblem::new(1, &[&f], &ctx, start, workspace()),
                &SolverConfig::default(),
            )
            .unwrap();
            serde_json::to_string(&sol).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn approach_waypoints_descend_onto_target() {
        let s = Pose::from_translation(Point3::new(0.0, 0.0, 0.2));
        let g = Pose::from_translation(Point3::new(0.3, 0.0, 0.05));
        let w = build_waypoints(&s, &g, MotionStyle::Approach, 8, Some(0.25));
        assert_eq!(w.len(), 8);
        assert!((w[0].translation.z - 0.25).abs() < 1e-12);
        assert!((w[5].translation.z - (0.05 + PRE_HEIGHT)).abs() < 1e-12);
        assert_eq!(w[7], g);
        let d = build_waypoints(&s, &g, MotionStyle::Direct, 4, None);
        assert_eq!(d.len(), 4);
        assert_eq!(d[3], g);
        assert_eq!(densify(&s, &d, 4).len(), 16);
    }
}
