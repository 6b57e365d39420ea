//! Run directories and the artifacts inside them.
//!
//! ```text
//! <out>/manifest.json
//! <out>/report.json              seed aggregate (mean and std)
//! <out>/seed_<s>/progress.csv    one row per training iteration
//! <out>/seed_<s>/checkpoints.csv one row per evaluation checkpoint
//! <out>/seed_<s>/model.json      final parameters
//! <out>/seed_<s>/report.json     metrics of that seed
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hazboard::metrics::{self, EvalCheckpoint, MetricsReport};
use hazboard::trainer::{self, Counters, IterationStats, Model, ModelCheckpoint, Observer, Trainer};
use hazboard::{ExperimentConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::config;

pub const PROGRESS_COLUMNS: [&str; 20] = [
    "iteration",
    "env_steps",
    "mean_ep_return",
    "mean_ep_cost",
    "episodes",
    "lambda",
    "tau",
    "write_rate",
    "context_occupancy",
    "hazard_event_rate",
    "hazard_label_rate",
    "wbce",
    "clip_loss",
    "write_penalty",
    "entropy",
    "critic_loss_r",
    "critic_loss_c",
    "approx_kl",
    "epochs_run",
    "cost_estimate",
];

pub const CHECKPOINT_COLUMNS: [&str; 5] = ["step", "mean_return", "mean_cost", "violation_count", "n_eval"];

/// Nine significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn progress_record(s: &IterationStats) -> Vec<String> {
    let f = fmt_float;
    vec![
        s.iteration.to_string(),
        s.env_steps.to_string(),
        f(s.mean_ep_return),
        f(s.mean_ep_cost),
        s.episodes.to_string(),
        f(s.lambda),
        f(s.tau),
        f(s.write_rate),
        f(s.context_occupancy),
        f(s.hazard_event_rate),
        f(s.hazard_label_rate),
        f(s.wbce),
        f(s.clip_loss),
        f(s.write_penalty),
        f(s.entropy),
        f(s.critic_loss_r),
        f(s.critic_loss_c),
        f(s.approx_kl),
        s.epochs_run.to_string(),
        f(s.cost_estimate),
    ]
}

fn checkpoint_record(c: &EvalCheckpoint) -> Vec<String> {
    vec![
        c.step.to_string(),
        fmt_float(c.mean_return),
        fmt_float(c.mean_cost),
        c.violations.to_string(),
        c.n_episodes.to_string(),
    ]
}

struct CsvObserver {
    progress: csv::Writer<File>,
    checkpoints: csv::Writer<File>,
    label_rates: Vec<f64>,
}

impl CsvObserver {
    fn create(dir: &Path) -> Result<Self> {
        let mut progress = csv::Writer::from_path(dir.join("progress.csv"))?;
        progress.write_record(PROGRESS_COLUMNS)?;
        progress.flush()?;
        let mut checkpoints = csv::Writer::from_path(dir.join("checkpoints.csv"))?;
        checkpoints.write_record(CHECKPOINT_COLUMNS)?;
        checkpoints.flush()?;
        Ok(Self {
            progress,
            checkpoints,
            label_rates: Vec::new(),
        })
    }
}

fn io(e: csv::Error) -> hazboard::Error {
    hazboard::Error::Io(e.into())
}

impl Observer for CsvObserver {
    fn on_iteration(&mut self, stats: &IterationStats) -> hazboard::Result<()> {
        self.label_rates.push(stats.hazard_label_rate);
        self.progress.write_record(progress_record(stats)).map_err(io)?;
        Ok(self.progress.flush()?)
    }

    fn on_checkpoint(&mut self, cp: &EvalCheckpoint) -> hazboard::Result<()> {
        self.checkpoints.write_record(checkpoint_record(cp)).map_err(io)?;
        Ok(self.checkpoints.flush()?)
    }
}

/// Written before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Resolved config as TOML.
    pub config: String,
    pub seeds: Vec<u64>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        Ok(config::from_toml(&self.config)?)
    }
}

/// Final parameters plus the controller state evaluation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub env_steps: u64,
    pub lambda: f64,
    pub tau: f64,
    pub model: ModelCheckpoint,
}

pub fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed_{seed}"))
}

pub const SEED_ARTIFACTS: [&str; 4] = ["progress.csv", "checkpoints.csv", "model.json", "report.json"];

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Outcome of one seed of a training run.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub report: MetricsReport,
    /// Mean logged hazard-label positive rate over iterations.
    pub label_rate: f64,
}

/// Trains every configured seed into `dir`.
pub fn train(cfg: &ExperimentConfig, dir: &Path, command: &str) -> Result<Vec<SeedOutcome>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let seeds = cfg.run.seeds.clone();
    let mut artifacts = vec!["manifest.json".to_string(), "report.json".to_string()];
    for &s in &seeds {
        artifacts.extend(SEED_ARTIFACTS.iter().map(|a| format!("seed_{s}/{a}")));
    }
    let manifest = RunManifest {
        version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        command: command.to_string(),
        config: config::to_toml(cfg)?,
        seeds: seeds.clone(),
        artifacts,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let sd = seed_dir(dir, seed);
        fs::create_dir_all(&sd)?;
        let mut observer = CsvObserver::create(&sd)?;
        let mut trainer = Trainer::new(cfg.clone(), seed)?;
        let report = trainer.run(&mut observer)?;
        let saved = SavedModel {
            env_steps: trainer.env_steps(),
            lambda: trainer.dual().lambda,
            tau: trainer.threshold().tau,
            model: trainer.model().checkpoint(),
        };
        write_json(&sd.join("model.json"), &saved)?;
        write_json(&sd.join("report.json"), &report)?;
        let rates = &observer.label_rates;
        outcomes.push(SeedOutcome {
            seed,
            report,
            label_rate: rates.iter().sum::<f64>() / rates.len().max(1) as f64,
        });
    }
    write_json(&dir.join("report.json"), &aggregate(&outcomes.iter().map(|o| (o.seed, o.report.clone())).collect::<Vec<_>>()))?;
    Ok(outcomes)
}

/// Re-evaluates a saved seed model; returns the metrics of that single
/// checkpoint.
pub fn eval(run: &Path, seed: u64, overrides: &[String]) -> Result<MetricsReport> {
    let manifest = RunManifest::load(run)?;
    let mut table: toml::Table = manifest.config.parse().context("manifest config snapshot")?;
    for o in overrides {
        config::apply_override(&mut table, o)?;
    }
    let cfg = config::resolve(table)?;
    let saved: SavedModel = read_json(&seed_dir(run, seed).join("model.json"))?;
    let model = Model::from_checkpoint(&cfg, &saved.model)?;
    let episodes = trainer::evaluate(
        &model,
        &cfg,
        saved.tau,
        seed.wrapping_add(cfg.run.eval_seed_offset),
        &mut Counters::default(),
    )?;
    let cp = EvalCheckpoint::from_episodes(saved.env_steps, episodes, cfg.dual.cost_budget)?;
    Ok(metrics::report(&[cp], cfg.dual.cost_budget)?)
}

/// Mean and population standard deviation over the seeds where a metric is
/// present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(Summary {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    /// Metric name to summary; metrics absent in every seed are omitted.
    pub metrics: BTreeMap<String, Summary>,
    pub per_seed: BTreeMap<String, MetricsReport>,
}

pub fn aggregate(reports: &[(u64, MetricsReport)]) -> AggregateReport {
    let mut metrics = BTreeMap::new();
    let mut put = |name: &str, vals: Vec<f64>| {
        if let Some(s) = summarize(&vals) {
            metrics.insert(name.to_string(), s);
        }
    };
    put("r_final", reports.iter().map(|r| r.1.r_final).collect());
    put("c_final", reports.iter().map(|r| r.1.c_final).collect());
    put("c_peak", reports.iter().map(|r| r.1.c_peak).collect());
    put("violation_rate", reports.iter().map(|r| r.1.violation_rate).collect());
    put("r_feas", reports.iter().filter_map(|r| r.1.r_feas).collect());
    put("time_to_feasible", reports.iter().filter_map(|r| r.1.time_to_feasible.map(|t| t as f64)).collect());
    put("feasible_indicator", reports.iter().map(|r| r.1.feasible_indicator).collect());
    AggregateReport {
        seeds: reports.iter().map(|r| r.0).collect(),
        metrics,
        per_seed: reports.iter().map(|r| (format!("seed_{}", r.0), r.1.clone())).collect(),
    }
}

/// Merges the per-seed reports of a run directory into `report.json`.
pub fn report(run: &Path) -> Result<AggregateReport> {
    let manifest = RunManifest::load(run)?;
    let mut reports = Vec::new();
    for &s in &manifest.seeds {
        reports.push((s, read_json::<MetricsReport>(&seed_dir(run, s).join("report.json"))?));
    }
    let agg = aggregate(&reports);
    write_json(&run.join("report.json"), &agg)?;
    Ok(agg)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Runs the full method and the three ablations under the same budget and
/// seeds, one subdirectory per variant, plus `summary.csv`.
pub fn ablate(base: &ExperimentConfig, dir: &Path) -> Result<Vec<(Variant, SeedOutcome)>> {
    let mut rows = Vec::new();
    for v in Variant::ABLATIONS {
        let cfg = base.with_variant(v);
        for o in train(&cfg, &dir.join(v.name()), "ablate")? {
            rows.push((v, o));
        }
    }
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["variant", "seed", "r_final", "c_final", "r_feas", "feasible", "headline"])?;
    for (v, o) in &rows {
        let r = &o.report;
        let feasible = r.c_final <= r.budget;
        // R_feas when the variant ever met the budget, R_final otherwise.
        let headline = r.r_feas.unwrap_or(r.r_final);
        w.write_record([
            v.name().to_string(),
            o.seed.to_string(),
            fmt_float(r.r_final),
            fmt_float(r.c_final),
            opt(r.r_feas),
            (feasible as u8).to_string(),
            fmt_float(headline),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// One run per lookahead horizon, in `h<H>/` subdirectories, plus
/// `summary.csv`.
pub fn sweep_h(base: &ExperimentConfig, dir: &Path, horizons: &[usize]) -> Result<Vec<(usize, SeedOutcome)>> {
    if horizons.is_empty() {
        bail!(config::ConfigError("sweep-h needs at least one horizon".into()));
    }
    let mut rows = Vec::new();
    for &h in horizons {
        let mut cfg = base.clone();
        cfg.hazard.horizon = h;
        for o in train(&cfg, &dir.join(format!("h{h}")), "sweep-h")? {
            rows.push((h, o));
        }
    }
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["h", "seed", "r_final", "c_final", "feasible", "label_rate"])?;
    for (h, o) in &rows {
        let r = &o.report;
        w.write_record([
            h.to_string(),
            o.seed.to_string(),
            fmt_float(r.r_final),
            fmt_float(r.c_final),
            ((r.c_final <= r.budget) as u8).to_string(),
            fmt_float(o.label_rate),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
