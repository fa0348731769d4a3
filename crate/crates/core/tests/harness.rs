use taskrep_core::harness::{
    classify_failure, render_table, run_benchmark, AblationMode, BenchConfig, BenchmarkReport,
    ErrorCategory, HarnessError, Profile, ProfileSpec,
};
use taskrep_core::planner::{LogEntry, Module};

fn bench() -> BenchConfig {
    BenchConfig::load(taskrep_core::fixtures_dir().join("bench.toml")).unwrap()
}

fn entry(module: Module, event: &str, ok: bool) -> LogEntry {
    LogEntry {
        stage: 1,
        t: 0.0,
        module,
        event: event.into(),
        ok,
        message: String::new(),
    }
}

#[test]
fn first_flagged_module_decides_the_category() {
    let cases = [
        (
            Module::Grounding,
            "bindings",
            ErrorCategory::ToolkitExtraction,
        ),
        (Module::Grounding, "single_shot", ErrorCategory::Planning),
        (Module::Grounding, "decompose", ErrorCategory::Planning),
        (Module::Toolkit, "extract", ErrorCategory::ToolkitExtraction),
        (
            Module::Tracking,
            "track",
            ErrorCategory::RepresentationTracking,
        ),
        (Module::Planner, "solve", ErrorCategory::ActionGeneration),
        (Module::Scene, "step", ErrorCategory::Other),
    ];
    for (module, event, want) in cases {
        let log = [
            entry(Module::Toolkit, "extract", true),
            entry(module, event, false),
            entry(Module::Planner, "solve", false),
        ];
        assert_eq!(classify_failure(&log), want, "{module:?} {event}");
    }
    assert_eq!(
        classify_failure(&[entry(Module::Planner, "solve", true)]),
        ErrorCategory::Other
    );
}

#[test]
fn shipped_config_resolves_paths_and_defaults() {
    let cfg = bench();
    assert_eq!(cfg.tasks.len(), 5);
    assert!(cfg.tasks.iter().all(|t| t.is_absolute() && t.exists()));
    assert!(cfg.registry.exists());
    assert_eq!(cfg.mode, AblationMode::Full);
    assert_eq!(cfg.profile.resolve().unwrap(), Profile::default());
    cfg.validate().unwrap();
}

#[test]
fn config_errors_are_reported() {
    let base = "tasks = [\"tasks/pick_place.json\"]\nregistry = \"registry.json\"\n";
    assert!(matches!(
        BenchConfig::from_toml(&format!("{base}bogus = 1\n"), "x.toml"),
        Err(HarnessError::Config { .. })
    ));
    assert!(BenchConfig::from_toml(&format!("{base}mode = \"sideways\"\n"), "x.toml").is_err());
    let mut cfg =
        BenchConfig::from_toml(&format!("{base}profile = \"foggy\"\n"), "x.toml").unwrap();
    assert!(matches!(cfg.validate(), Err(HarnessError::Invalid(_))));
    cfg.profile = ProfileSpec::Custom(Profile {
        motion_occlusion: 1.5,
        ..Profile::default()
    });
    assert!(cfg.validate().is_err());
    let mut cfg = bench();
    cfg.trials = 0;
    assert!(run_benchmark(&cfg).is_err());
    let mut cfg = bench();
    cfg.tasks.push("/nonexistent/task.json".into());
    assert!(run_benchmark(&cfg).is_err());
    let mut cfg = bench();
    cfg.ablation.no_cog_error_p = -0.1;
    assert!(run_benchmark(&cfg).is_err());
}

#[test]
fn custom_profiles_parse_inline() {
    let text = "tasks = [\"a.json\"]\nregistry = \"r.json\"\n[profile]\nnoise_scale = 0.5\nmotion_occlusion = 0.3\n";
    let cfg = BenchConfig::from_toml(text, "x.toml").unwrap();
    let p = cfg.profile.resolve().unwrap();
    assert_eq!(p.noise_scale, 0.5);
    assert_eq!(p.motion_occlusion, 0.3);
    assert_eq!(p.rest_occlusion, Profile::default().rest_occlusion);
}

#[test]
fn reports_round_trip_and_render() {
    let mut cfg = bench();
    cfg.trials = 3;
    cfg.repeats = 2;
    cfg.mode = AblationMode::FixedVpv;
    let r = run_benchmark(&cfg).unwrap();
    let back = BenchmarkReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.to_json(), r.to_json());
    let table = render_table(&r);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Task"));
    assert!(lines[6].starts_with("Total"));
    assert!(table.contains("over 2 repeats"));
    assert!(table.contains("failures:"));
    assert_eq!(r.seeds, vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(r.config.registry, "registry.json");
}

#[test]
fn worker_count_does_not_change_the_report() {
    let mut cfg = bench();
    cfg.trials = 4;
    cfg.mode = AblationMode::NoCog;
    cfg.profile = ProfileSpec::Named("occluded".into());
    cfg.workers = 1;
    let serial = run_benchmark(&cfg).unwrap().to_json();
    cfg.workers = 7;
    assert_eq!(run_benchmark(&cfg).unwrap().to_json(), serial);
}

#[test]
fn seeds_change_outcomes() {
    let mut cfg = bench();
    cfg.trials = 6;
    let a = run_benchmark(&cfg).unwrap();
    cfg.seed = 1000;
    let b = run_benchmark(&cfg).unwrap();
    assert_ne!(a.trials, b.trials);
}

#[test]
fn zero_noise_suite_has_no_failures() {
    let mut cfg = bench();
    cfg.trials = 5;
    cfg.profile = ProfileSpec::Named("none".into());
    let r = run_benchmark(&cfg).unwrap();
    assert_eq!(r.total.successes, r.total.trials, "{:?}", r.histogram);
    assert!(r.histogram.is_empty());
}
