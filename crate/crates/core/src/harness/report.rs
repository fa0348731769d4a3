use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::trial::TrialResult;
use super::{AblationMode, BenchConfig, ErrorCategory, HarnessError, Profile};

/// Settings a report was produced with. Paths are reduced to file names so
/// reports do not depend on where the fixtures live.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub mode: AblationMode,
    pub trials: usize,
    pub repeats: usize,
    pub seed: u64,
    pub profile: Profile,
    pub no_cog_error_p: f64,
    pub registry: String,
    pub tasks: Vec<String>,
}

impl ConfigEcho {
    pub fn new(cfg: &BenchConfig) -> Result<ConfigEcho, HarnessError> {
        let name = |p: &std::path::Path| {
            p.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        };
        Ok(ConfigEcho {
            mode: cfg.mode,
            trials: cfg.trials,
            repeats: cfg.repeats,
            seed: cfg.seed,
            profile: cfg.profile.resolve()?,
            no_cog_error_p: cfg.ablation.no_cog_error_p,
            registry: name(&cfg.registry),
            tasks: cfg.tasks.iter().map(|t| name(t)).collect(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_time_s: f64,
    pub mean_extraction_time_s: f64,
}

impl Summary {
    pub fn of<'a>(trials: impl IntoIterator<Item = &'a TrialResult>) -> Summary {
        let mut s = Summary::default();
        let (mut time, mut extraction) = (0.0, 0.0);
        for t in trials {
            s.trials += 1;
            s.successes += usize::from(t.success);
            time += t.time_s;
            extraction += t.extraction_time_s;
        }
        if s.trials > 0 {
            let n = s.trials as f64;
            s.success_rate = s.successes as f64 / n;
            s.mean_time_s = time / n;
            s.mean_extraction_time_s = extraction / n;
        }
        s
    }

    pub fn failures(&self) -> usize {
        self.trials - self.successes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ConfigEcho,
    /// Pooled over repeats.
    pub tasks: Vec<TaskSummary>,
    pub total: Summary,
    /// Suite totals of each repeat.
    pub repeats: Vec<Summary>,
    /// Sample standard deviations over repeats; 0 for a single repeat.
    pub success_rate_std: f64,
    pub mean_time_std: f64,
    /// Failure count per category; absent categories have no failures.
    pub histogram: BTreeMap<ErrorCategory, usize>,
    /// Trial seeds of each task, repeats concatenated.
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialResult>,
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

impl BenchmarkReport {
    pub fn build(
        config: ConfigEcho,
        tasks: &[String],
        repeats: Vec<Vec<TrialResult>>,
        seeds: Vec<u64>,
    ) -> Self {
        let trials: Vec<TrialResult> = repeats.iter().flatten().cloned().collect();
        let per_task = tasks
            .iter()
            .map(|name| TaskSummary {
                task: name.clone(),
                summary: Summary::of(trials.iter().filter(|t| &t.task == name)),
            })
            .collect();
        let repeat_totals: Vec<Summary> = repeats.iter().map(Summary::of).collect();
        let mut histogram = BTreeMap::new();
        for c in trials.iter().filter_map(|t| t.failure) {
            *histogram.entry(c).or_insert(0) += 1;
        }
        BenchmarkReport {
            config,
            tasks: per_task,
            total: Summary::of(&trials),
            success_rate_std: sample_std(
                &repeat_totals
                    .iter()
                    .map(|s| s.success_rate)
                    .collect::<Vec<_>>(),
            ),
            mean_time_std: sample_std(
                &repeat_totals
                    .iter()
                    .map(|s| s.mean_time_s)
                    .collect::<Vec<_>>(),
            ),
            repeats: repeat_totals,
            histogram,
            seeds,
            trials,
        }
    }

    /// Histogram counts sum to the failure count, and successes plus
    /// failures to the trial count.
    pub fn accounting_holds(&self) -> bool {
        let failed = self.trials.iter().filter(|t| !t.success).count();
        let categorized = self.trials.iter().all(|t| t.success != t.failure.is_some());
        categorized
            && self.histogram.values().sum::<usize>() == failed
            && self.total.successes + failed == self.total.trials
    }

    pub fn category_share(&self, c: ErrorCategory) -> f64 {
        if self.total.trials == 0 {
            return 0.0;
        }
        self.histogram.get(&c).copied().unwrap_or(0) as f64 / self.total.trials as f64
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<BenchmarkReport, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

/// Text table with one row per task and a totals row.
pub fn render_table(r: &BenchmarkReport) -> String {
    let width = r
        .tasks
        .iter()
        .map(|t| t.task.len())
        .chain([5])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let row = |out: &mut String, name: &str, s: &Summary| {
        writeln!(
            out,
            "{name:<width$}  {:>7}  {:>7.1}",
            format!("{:.1}%", 100.0 * s.success_rate),
            s.mean_time_s
        )
        .expect("write to string");
    };
    writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}",
        "Task", "Success", "Time(s)"
    )
    .expect("write to string");
    for t in &r.tasks {
        row(&mut out, &t.task, &t.summary);
    }
    row(&mut out, "Total", &r.total);
    if r.repeats.len() > 1 {
        writeln!(
            out,
            "over {} repeats: success std {:.1} points, time std {:.1} s",
            r.repeats.len(),
            100.0 * r.success_rate_std,
            r.mean_time_std
        )
        .expect("write to string");
    }
    if !r.histogram.is_empty() {
        let parts: Vec<String> = r
            .histogram
            .iter()
            .map(|(c, n)| format!("{c} {n}"))
            .collect();
        writeln!(out, "failures: {}", parts.join(", ")).expect("write to string");
    }
    out
}
