use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use inner_iou::par::with_threads;
use inner_iou::simlab::{run_simulation_with, RunOptions, Scenario, SimConfig, SimulationOutput};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::output::{csv_writer, print_stdout, real, write_json};
use crate::Global;

pub const ERROR_METRIC: &str = "l1 distance between anchor and target over the four edge coordinates";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    High,
    Low,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// JSON file with SimConfig fields; omitted fields take their defaults.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,

    /// Use a built-in preset instead of a config file.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,

    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,

    /// Also write cases.csv with the final state of every case.
    #[arg(long)]
    per_case: bool,

    #[arg(long)]
    n_points: Option<usize>,

    #[arg(long)]
    iterations: Option<usize>,

    #[arg(long)]
    step_size: Option<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_digest: String,
    seed: u64,
    spec_list: Vec<String>,
    timestamp: String,
    tool_version: &'static str,
    cases: usize,
    error_metric: &'static str,
    config: &'a SimConfig,
}

fn load_config(args: &SimArgs, global: &Global) -> Result<SimConfig> {
    let mut cfg = match (&args.config, args.scenario) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        (None, Some(ScenarioArg::Low)) => SimConfig::scenario(Scenario::Low),
        (None, Some(ScenarioArg::High) | None) => SimConfig::scenario(Scenario::High),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_points {
        cfg.n_points = n;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = args.step_size {
        cfg.step_size = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// SHA-256 of the effective config's canonical JSON.
pub fn config_digest(cfg: &SimConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_summary(path: &Path, out: &SimulationOutput) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["spec", "iteration", "total_error"])?;
    for s in &out.summaries {
        let name = s.spec.describe();
        for (t, e) in s.total_error_curve.iter().enumerate() {
            w.write_record([name.as_str(), &t.to_string(), &real(*e)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_cases(path: &Path, cfg: &SimConfig, out: &SimulationOutput) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["case_id", "spec", "initial_error", "final_error", "final_iou", "clamps"])?;
    for c in out.cases.iter().flatten() {
        w.write_record([
            c.case_id.to_string(),
            cfg.specs[c.spec_id].describe(),
            real(c.initial_error),
            real(c.final_error),
            real(c.final_iou),
            c.clamps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: SimArgs, global: &Global) -> Result<ExitCode> {
    let cfg = load_config(&args, global)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;

    let opts = RunOptions { keep_case_outcomes: args.per_case, ..RunOptions::default() };
    let out = with_threads(global.threads, || run_simulation_with(&cfg, opts))?;

    write_summary(&args.out.join("summary.csv"), &out)?;
    if args.per_case {
        write_cases(&args.out.join("cases.csv"), &cfg, &out)?;
    }
    let manifest = Manifest {
        config_digest: config_digest(&cfg)?,
        seed: cfg.seed,
        spec_list: cfg.specs.iter().map(|s| s.describe()).collect(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        tool_version: env!("CARGO_PKG_VERSION"),
        cases: cfg.case_count(),
        error_metric: ERROR_METRIC,
        config: &cfg,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;

    let mut table =
        format!("{:<24} {:>20} {:>20} {:>10} {:>8}", "spec", "final_total_error", "auc", "increases", "clamps");
    for s in &out.summaries {
        table.push_str(&format!(
            "\n{:<24} {:>20.6} {:>20.6} {:>10} {:>8}",
            s.spec.describe(),
            s.final_total_error(),
            s.auc,
            s.error_increases(),
            s.clamps
        ));
    }
    print_stdout(&table)?;
    Ok(ExitCode::SUCCESS)
}
