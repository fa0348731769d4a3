//! Runs every shipped task for a few seeds and prints the outcome per seed.
//!
//! cargo run --release -p taskrep-core --example suite -- [profile] [mode] [seeds]

use taskrep_core::harness::{AblationMode, PreparedTask, Profile, TrialConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let profile = args.next().unwrap_or_else(|| "default".into());
    let mode: AblationMode = args.next().unwrap_or_else(|| "full".into()).parse()?;
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let dir = taskrep_core::fixtures_dir();
    for name in ["pick_place", "plush", "tool_insert", "drawer", "stack"] {
        let mut cfg = TrialConfig::new(
            dir.join(format!("tasks/{name}.json")),
            dir.join("registry.json"),
        );
        cfg.profile = Profile::named(&profile).ok_or(format!("unknown profile `{profile}`"))?;
        cfg.mode = mode;
        let task = PreparedTask::load(&cfg)?;
        let mut ok = 0;
        for seed in 0..seeds {
            let r = task.run(seed)?;
            match r.failure {
                None => ok += 1,
                Some(c) => println!(
                    "  {name} seed {seed}: {c}: {}",
                    r.message.unwrap_or_default()
                ),
            }
        }
        println!("{name}: {ok}/{seeds}");
    }
    Ok(())
}
