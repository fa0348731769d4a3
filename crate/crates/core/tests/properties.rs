use std::collections::BTreeMap;

use proptest::prelude::*;
use taskrep_core::dsl::{eval_expr, parse_constraint, pretty, BoundValue, EvalContext};
use taskrep_core::geometry::{Aabb, Point3, Pose, Rotation};
use taskrep_core::harness::{
    classify_failure, AblationMode, BenchConfig, ProfileSpec, TrialConfig,
};
use taskrep_core::scene::{randomize, scene_load};
use taskrep_core::toolkit::{registry_load, RepresentationKind, RepresentationValue};

fn point(r: f64) -> impl Strategy<Value = Point3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = Rotation> {
    point(3.0).prop_map(Rotation::from_scaled_axis)
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), point(1.0)).prop_map(|(r, t)| Pose::new(r, t))
}

proptest! {
    #[test]
    fn pose_inverse_cancels(p in pose(), q in point(1.0)) {
        let id = p.compose(&p.inverse());
        prop_assert!(id.approx_eq(&Pose::identity(), 1e-12));
        let back = p.inverse().transform_point(&p.transform_point(&q));
        prop_assert!(back.distance(&q) < 1e-12);
    }

    #[test]
    fn pose_matrix_round_trips(p in pose()) {
        let q = Pose::from_matrix(&p.to_matrix()).unwrap();
        prop_assert!(q.approx_eq(&p, 1e-9));
    }

    #[test]
    fn geodesic_is_a_metric(a in rotation(), b in rotation(), c in rotation()) {
        let ab = a.geodesic(&b);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&ab));
        prop_assert!((ab - b.geodesic(&a)).abs() < 1e-9);
        prop_assert!(a.geodesic(&a) < 1e-12);
        prop_assert!(ab <= a.geodesic(&c) + c.geodesic(&b) + 1e-9);
    }

    #[test]
    fn slerp_hits_endpoints_and_splits_evenly(a in rotation(), b in rotation(), t in 0.0..1.0f64) {
        prop_assert!(a.slerp(&b, 0.0).geodesic(&a) < 1e-9);
        prop_assert!(a.slerp(&b, 1.0).geodesic(&b) < 1e-6);
        let m = a.slerp(&b, t);
        let total = a.geodesic(&b);
        prop_assert!((a.geodesic(&m) - t * total).abs() < 1e-6);
    }

    #[test]
    fn parser_never_panics(text in "[a-z_(),.0-9 \"-]{0,40}") {
        let kinds: BTreeMap<String, RepresentationKind> = [("a".to_string(), RepresentationKind::Point)].into();
        let _ = parse_constraint(&text, &kinds);
    }

    #[test]
    fn pretty_print_reparses_and_evaluates_identically(
        k in -5.0..5.0f64,
        off in point(1.0),
        at in point(1.0),
        a in point(1.0),
        pick in 0usize..4,
    ) {
        let texts = [
            format!(r#"mul({k:?}, norm(sub(ee_pos, add(point_of(rep("a")), vec({:?}, {:?}, {:?})))))"#, off.x, off.y, off.z),
            format!(r#"max(abs(dot(sub(ee_pos, point_of(rep("a"))), vec(0, 0, 1))), {k:?})"#),
            format!(r#"add(angle_between(ee_pos, vec({:?}, {:?}, 1)), min({k:?}, 0.5))"#, off.x, off.y),
            r#"norm(cross(sub(ee_pos, point_of(rep("a"))), axis_of(ee_pose, z)))"#.to_string(),
        ];
        let kinds: BTreeMap<String, RepresentationKind> = [("a".to_string(), RepresentationKind::Point)].into();
        let e = parse_constraint(&texts[pick], &kinds).unwrap();
        let again = parse_constraint(&pretty(&e), &kinds).unwrap();
        prop_assert_eq!(pretty(&again), pretty(&e));
        let mut ctx = EvalContext::new();
        ctx.bind("a", BoundValue::fixed(RepresentationValue::Point { point: a }));
        let cand = Pose::from_translation(at);
        let (x, y) = (eval_expr(&e, &ctx, &cand).unwrap(), eval_expr(&again, &ctx, &cand).unwrap());
        prop_assert!(x == y || (x.is_nan() && y.is_nan()));
    }

    #[test]
    fn running_mean_matches_batch_mean(times in prop::collection::vec(0.0..20.0f64, 1..30)) {
        let mut reg = registry_load(taskrep_core::fixtures_dir().join("registry.json")).unwrap();
        for t in &times {
            reg.update_history("SE3PoseEstimator", *t).unwrap();
        }
        let tool = reg.get("SE3PoseEstimator").unwrap();
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        prop_assert!((tool.avg_time_s - mean).abs() < 1e-9);
        prop_assert_eq!(tool.invocations, times.len() as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn randomized_scenes_respect_bounds(seed in any::<u64>(), task in 0usize..5) {
        let names = ["pick_place", "plush", "tool_insert", "drawer", "stack"];
        let s = scene_load(taskrep_core::fixtures_dir().join(format!("scenes/{}.json", names[task]))).unwrap();
        let a = randomize(&s, seed, &s.placement).unwrap();
        prop_assert_eq!(&a, &randomize(&s, seed, &s.placement).unwrap());
        let grown = Aabb::new(
            s.placement.min + Point3::new(-1e-9, -1e-9, -1e-9),
            s.placement.max + Point3::new(1e-9, 1e-9, 1e-9),
        );
        for o in a.objects.iter().filter(|o| o.supports.is_empty()) {
            let base = o.pose.translation - Point3::new(0.0, 0.0, o.extent[2]);
            prop_assert!(grown.contains(&Point3::new(base.x, base.y, s.placement.min.z)), "{} at {:?}", o.id, base);
        }
        for (i, x) in a.objects.iter().enumerate() {
            for y in &a.objects[i + 1..] {
                if x.supports.is_empty() && y.supports.is_empty() {
                    prop_assert!(!x.aabb().overlaps(&y.aabb()), "{} overlaps {}", x.id, y.id);
                }
            }
        }
    }

    #[test]
    fn trials_are_deterministic_and_consistently_classified(seed in 0u64..10_000, task in 0usize..5, mode in 0usize..4) {
        let names = ["pick_place", "plush", "tool_insert", "drawer", "stack"];
        let dir = taskrep_core::fixtures_dir();
        let mut cfg = TrialConfig::new(dir.join(format!("tasks/{}.json", names[task])), dir.join("registry.json"));
        cfg.mode = [AblationMode::Full, AblationMode::NoCog, AblationMode::FixedSp, AblationMode::FixedVpv][mode];
        let a = taskrep_core::harness::run_trial(&cfg, seed).unwrap();
        let b = taskrep_core::harness::run_trial(&cfg, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.success, a.failure.is_none());
        if let Some(c) = a.failure {
            prop_assert_eq!(c, classify_failure(&a.log));
        }
        prop_assert!(a.time_s >= a.extraction_time_s - 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reports_account_for_every_trial(seed in any::<u32>(), trials in 1usize..5, repeats in 1usize..3, occluded in any::<bool>()) {
        let mut cfg = BenchConfig::load(taskrep_core::fixtures_dir().join("bench.toml")).unwrap();
        cfg.seed = u64::from(seed);
        cfg.trials = trials;
        cfg.repeats = repeats;
        cfg.mode = AblationMode::NoCog;
        cfg.profile = ProfileSpec::Named(if occluded { "occluded" } else { "default" }.into());
        let r = taskrep_core::harness::run_benchmark(&cfg).unwrap();
        prop_assert!(r.accounting_holds());
        prop_assert_eq!(r.total.trials, cfg.tasks.len() * trials * repeats);
        prop_assert_eq!(r.repeats.len(), repeats);
        prop_assert_eq!(r.seeds.len(), trials * repeats);
        let per_task: usize = r.tasks.iter().map(|t| t.summary.successes).sum();
        prop_assert_eq!(per_task, r.total.successes);
    }
}
