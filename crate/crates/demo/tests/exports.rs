use serde_json::Value;
use taskrep_demo::{eval_expression, rank_tools, run_trial, task_names};

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn every_bundled_task_runs() {
    for name in parse(&task_names()).as_array().unwrap() {
        let out = parse(&run_trial(name.as_str().unwrap(), "full", "none", 0));
        assert!(out.get("error").is_none(), "{out}");
        assert_eq!(out["result"]["success"], true, "{name}");
        assert!(!out["path"].as_array().unwrap().is_empty());
    }
}

#[test]
fn ranking_prefers_cheap_center_point() {
    let out = parse(&rank_tools("block", "point", "full"));
    assert_eq!(out["selected"], "CenterPointExtractor");
    let fixed = parse(&rank_tools("drawer", "pose", "fixed_sp"));
    assert!(fixed["error"].as_str().unwrap().contains("pose"));
}

#[test]
fn expression_matches_scene_distance() {
    let out = parse(&eval_expression(
        "pick_place",
        4,
        r#"norm(sub(point_of(rep("red")), point_of(rep("green"))))"#,
    ));
    let objs = out["scene"]["objects"].as_array().unwrap();
    let at = |i: usize| {
        [
            objs[i]["x"].as_f64().unwrap(),
            objs[i]["y"].as_f64().unwrap(),
            objs[i]["z"].as_f64().unwrap(),
        ]
    };
    let (a, b) = (at(0), at(1));
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    assert!((out["value"].as_f64().unwrap() - d).abs() < 1e-12);
    let bad = parse(&eval_expression("pick_place", 0, "norm(rep(\"nothing\"))"));
    assert!(bad["error"].as_str().is_some());
}
