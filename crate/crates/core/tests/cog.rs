use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use taskrep_core::cog::remote::{RemoteBackend, RemoteConfig, Transport};
use taskrep_core::cog::schema::{
    delete_field, field_paths, validate_phase, DecomposeResponse, StageHints,
};
use taskrep_core::cog::{
    check_decompose, ground, GroundError, GroundOptions, GroundingBackend, Instruction,
    OracleBackend, Phase, TaskScript, BANNED_HINT_TOKENS,
};
use taskrep_core::scene::{scene_load, Observation};
use taskrep_core::toolkit::registry_load;

const TASKS: [&str; 5] = ["pick_place", "plush", "tool_insert", "drawer", "stack"];

fn oracle(task: &str) -> (OracleBackend, taskrep_core::scene::SceneState) {
    let dir = taskrep_core::fixtures_dir();
    let path = dir.join("tasks").join(format!("{task}.json"));
    let script = TaskScript::load(&path).unwrap();
    let scene = scene_load(script.scene_path(&path)).unwrap();
    let reg = registry_load(dir.join("registry.json")).unwrap();
    (OracleBackend::new(script, reg, &scene), scene)
}

fn single_shot(task: &str) -> Value {
    let (b, _) = oracle(task);
    b.call(Phase::SingleShot, &json!({ "seed": 0 })).unwrap()
}

#[test]
fn complete_single_shot_responses_validate() {
    for t in TASKS {
        validate_phase(Phase::SingleShot, &single_shot(t)).unwrap();
    }
}

#[test]
fn deleting_any_field_is_rejected() {
    for t in TASKS {
        let full = single_shot(t);
        let paths = field_paths(&full);
        assert!(paths.len() > 20, "{t}: {} fields", paths.len());
        for p in &paths {
            let mut v = full.clone();
            assert!(delete_field(&mut v, p));
            assert!(
                validate_phase(Phase::SingleShot, &v).is_err(),
                "{t}: deleting {p:?} went unnoticed"
            );
        }
    }
}

#[test]
fn single_shot_error_rate_matches_model() {
    let (b, _) = oracle("pick_place");
    let b = b.with_single_shot_error(0.3);
    let n = 2000;
    let broken = (0..n)
        .filter(|&s| {
            validate_phase(
                Phase::SingleShot,
                &b.call(Phase::SingleShot, &json!({ "seed": s })).unwrap(),
            )
            .is_err()
        })
        .count();
    let rate = broken as f64 / n as f64;
    assert!((rate - 0.3).abs() < 0.04, "{rate}");
}

fn decomposition(stages: &[(usize, &str)]) -> DecomposeResponse {
    DecomposeResponse {
        stages: stages
            .iter()
            .map(|&(stage, h)| StageHints {
                stage,
                hints: vec![h.to_string()],
            })
            .collect(),
    }
}

#[test]
fn stage_numbers_must_be_contiguous() {
    let ok = decomposition(&[(1, "grasp the cup"), (2, "set it down")]);
    assert_eq!(check_decompose(&ok).unwrap().len(), 2);
    for bad in [
        decomposition(&[(1, "grasp the cup"), (3, "set it down")]),
        decomposition(&[(2, "grasp the cup")]),
        decomposition(&[(2, "grasp the cup"), (1, "set it down")]),
        decomposition(&[]),
    ] {
        assert!(matches!(
            check_decompose(&bad),
            Err(GroundError::Invalid { .. })
        ));
    }
}

#[test]
fn hints_naming_representations_are_rejected() {
    for w in BANNED_HINT_TOKENS {
        let text = format!("move to the {} of the cup", w.to_uppercase());
        let err = check_decompose(&decomposition(&[(1, &text)])).unwrap_err();
        assert!(err.to_string().contains(w), "{err}");
    }
    assert!(check_decompose(&decomposition(&[(1, "keep it pose-free")])).is_err());
    check_decompose(&decomposition(&[(1, "appoint a purpose for the pointers")])).unwrap();
}

#[test]
fn shipped_hints_are_representation_agnostic() {
    for t in TASKS {
        let (b, _) = oracle(t);
        check_decompose(&b.decompose()).unwrap();
    }
}

/// Replies with each queued body in turn, then repeats the last.
struct Scripted {
    replies: Vec<String>,
    calls: AtomicUsize,
    seen: Mutex<Vec<Value>>,
}

impl Scripted {
    fn new(replies: Vec<String>) -> Self {
        Scripted {
            replies,
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }
}

struct Shared(Arc<Scripted>);

impl Transport for Shared {
    fn post_json(&self, _url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, String> {
        let s = &self.0;
        assert_eq!(bearer, Some("k"));
        s.seen.lock().unwrap().push(body.clone());
        let i = s
            .calls
            .fetch_add(1, Ordering::SeqCst)
            .min(s.replies.len() - 1);
        Ok(json!({ "choices": [{ "message": { "content": s.replies[i] } }] }))
    }
}

fn remote(replies: Vec<String>) -> (RemoteBackend<Shared>, Arc<Scripted>) {
    let t = Arc::new(Scripted::new(replies));
    let b = RemoteBackend::with_key(
        RemoteConfig::new("http://mock/v1/chat", "m"),
        Shared(t.clone()),
        Some("k".into()),
    );
    (b, t)
}

#[test]
fn remote_repairs_invalid_replies() {
    let good = json!({ "stages": [{ "stage": 1, "hints": ["grasp the cup"] }] }).to_string();
    let (b, t) = remote(vec![
        "not json".into(),
        r#"{"stages": [{"stage": 1}]}"#.into(),
        format!("```json\n{good}\n```"),
    ]);
    let v = b.call(Phase::Decompose, &json!({})).unwrap();
    assert_eq!(v["stages"][0]["hints"][0], "grasp the cup");
    assert_eq!(b.retries(), 2);
    let seen = t.seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0]["temperature"], 0);
    assert_eq!(seen[0]["model"], "m");
    assert_eq!(seen[2]["messages"].as_array().unwrap().len(), 6);
}

#[test]
fn remote_gives_up_after_retry_budget() {
    let (b, t) = remote(vec!["{}".into()]);
    let err = b.call(Phase::Estimate, &json!({})).unwrap_err();
    assert!(err.message.contains("after 2 retries"), "{}", err.message);
    assert_eq!(b.retries(), 2);
    assert_eq!(t.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn remote_backend_grounds_like_the_oracle() {
    let (o, scene) = oracle("drawer");
    let replies = [
        Phase::Decompose,
        Phase::Constraints,
        Phase::Estimate,
        Phase::Emit,
    ]
    .map(|p| o.call(p, &json!({})).unwrap().to_string())
    .to_vec();
    let r = RemoteBackend::with_key(
        RemoteConfig::new("http://mock", "m"),
        Ordered(Mutex::new(replies)),
        Some("k".into()),
    );
    let reg = registry_load(taskrep_core::fixtures_dir().join("registry.json")).unwrap();
    let instr = Instruction::new("Open the drawer.");
    let obs = Observation::clear(&scene);
    let opts = GroundOptions::default();
    let a = ground(&o, &reg, &instr, &obs, &opts).unwrap();
    let b = ground(&r, &reg, &instr, &obs, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(r.retries(), 0);
}

struct Ordered(Mutex<Vec<String>>);

impl Transport for Ordered {
    fn post_json(&self, _: &str, _: Option<&str>, _: &Value) -> Result<Value, String> {
        let content = self.0.lock().unwrap().remove(0);
        Ok(json!({ "choices": [{ "message": { "content": content } }] }))
    }
}

#[test]
fn transport_errors_are_not_retried() {
    struct Down;
    impl Transport for Down {
        fn post_json(&self, _: &str, _: Option<&str>, _: &Value) -> Result<Value, String> {
            Err("connection refused".into())
        }
    }
    let b = RemoteBackend::with_key(RemoteConfig::new("http://mock", "m"), Down, None);
    let err = b.call(Phase::Emit, &json!({})).unwrap_err();
    assert!(err.message.contains("connection refused"));
    assert_eq!(b.retries(), 0);
}
