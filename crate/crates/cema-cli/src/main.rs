//! `cema` command-line interface: attack, evaluate, verify, and ablate
//! subcommands over a TOML run configuration.
//!
//! Exit codes: 0 success, 1 metrics below configured floors, 2 usage or
//! config error, 3 runtime failure. Errors print structured JSON on stderr.

use cema_core::pipeline::{
    first_asr, run_ablate, run_attack, run_evaluate, run_verify, write_artifacts, AblationAxis,
};
use cema_core::{AttackMethod, AttackReport, CemaError, RunConfig};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;

const CONFIG_ENV: &str = "CEMA_CONFIG";

#[derive(Parser)]
#[command(
    name = "cema",
    about = "Query-efficient black-box multi-task text adversarial attack",
    version
)]
struct Cli {
    /// Path to the TOML run config (or set CEMA_CONFIG)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override keys from the config file.
#[derive(Args)]
struct Overrides {
    /// Master seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Auxiliary set size override
    #[arg(long, global = true)]
    auxiliary_size: Option<usize>,
    /// Attack methods override (comma-separated: hotflip,fd,textbugger)
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full attack pipeline and write artifacts
    Attack,
    /// Query the victim on originals and stored adversarials, emit metrics
    Evaluate {
        /// Artifact directory (defaults to the config's output dir)
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Union-probability sweeps and independence/transfer tables
    Verify {
        /// Monte Carlo trials per sweep point
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Artifact directory to analyze (defaults to the config's output dir)
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Run the pipeline once per axis value and emit a side-by-side table
    Ablate {
        /// Axis: clusters, methods, embedder, clustering, or queries
        #[arg(long)]
        axis: String,
    },
}

/// On-disk config: the run config plus optional metric floors that gate the
/// evaluate exit code.
#[derive(Deserialize)]
struct FileConfig {
    #[serde(flatten)]
    run: RunConfig,
    #[serde(default)]
    floors: Floors,
}

#[derive(Deserialize, Default)]
struct Floors {
    /// Minimum acceptable ASR (percent) on the first classification task.
    min_asr: Option<f64>,
    /// Minimum acceptable mean similarity of selected adversarials.
    min_mean_similarity: Option<f64>,
}

fn parse_method(s: &str) -> Result<AttackMethod, CemaError> {
    match s.trim() {
        "hotflip" => Ok(AttackMethod::Hotflip),
        "fd" => Ok(AttackMethod::Fd),
        "textbugger" => Ok(AttackMethod::TextBugger),
        other => Err(CemaError::Config(format!(
            "unknown attack method {other:?} (expected hotflip, fd, textbugger)"
        ))),
    }
}

fn load_config(cli: &Cli) -> Result<FileConfig, CemaError> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var(CONFIG_ENV).ok().map(PathBuf::from))
        .ok_or_else(|| {
            CemaError::Config(format!("no config: pass --config or set {CONFIG_ENV}"))
        })?;
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| CemaError::Config(format!("cannot read config {path:?}: {e}")))?;
    let mut file: FileConfig = toml::from_str(&raw)
        .map_err(|e| CemaError::Config(format!("config {path:?}: {e}")))?;
    let ov = &cli.overrides;
    if let Some(seed) = ov.seed {
        file.run.master_seed = seed;
    }
    if let Some(dir) = &ov.output_dir {
        file.run.output_dir = dir.clone();
    }
    if let Some(n) = ov.auxiliary_size {
        file.run.auxiliary_size = n;
    }
    if let Some(methods) = &ov.methods {
        file.run.attack_methods = methods
            .iter()
            .map(|m| parse_method(m))
            .collect::<Result<_, _>>()?;
    }
    Ok(file)
}

fn print_report_summary(report: &AttackReport) {
    println!("{:<20} {:<16} {:>10}", "task", "metric", "value");
    for t in &report.tasks {
        let value = t
            .value
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into());
        println!("{:<20} {:<16} {:>10}", t.task_id, t.metric, value);
    }
    if let Some(s) = report.mean_similarity {
        println!("{:<20} {:<16} {:>10.4}", "-", "mean-similarity", s);
    }
    println!(
        "{:<20} {:<16} {:>10}",
        "-", "attack-queries", report.total_queries
    );
    println!(
        "{:<20} {:<16} {:>10}",
        "-", "eval-queries", report.eval_queries
    );
}

fn floors_violated(floors: &Floors, report: &AttackReport) -> bool {
    if let (Some(min), Some(asr)) = (floors.min_asr, first_asr(report)) {
        if asr < min {
            eprintln!("floor violated: asr {asr:.2} < {min:.2}");
            return true;
        }
    }
    if let (Some(min), Some(sim)) = (floors.min_mean_similarity, report.mean_similarity) {
        if sim < min {
            eprintln!("floor violated: mean similarity {sim:.4} < {min:.4}");
            return true;
        }
    }
    false
}

fn run(cli: &Cli) -> Result<u8, CemaError> {
    let file = load_config(cli)?;
    let cfg = &file.run;
    match &cli.command {
        Command::Attack => {
            let output = run_attack(cfg)?;
            write_artifacts(cfg, &output)?;
            let selected = output
                .outcomes
                .iter()
                .filter(|o| o.selection.chosen.is_some())
                .count();
            println!(
                "attacked {} texts ({} adversarials selected), {} victim queries",
                output.outcomes.len(),
                selected,
                output.attack_queries
            );
            println!("artifacts in {:?}", cfg.output_dir);
            Ok(0)
        }
        Command::Evaluate { artifacts } => {
            let dir = artifacts.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let report = run_evaluate(cfg, &dir)?;
            print_report_summary(&report);
            Ok(if floors_violated(&file.floors, &report) {
                1
            } else {
                0
            })
        }
        Command::Verify { trials, artifacts } => {
            let dir = artifacts.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let dir = if dir.join("candidates.jsonl").exists() {
                Some(dir)
            } else {
                None
            };
            let output = run_verify(cfg, dir.as_deref(), *trials)?;
            println!("{}", serde_json::to_string_pretty(&output)?);
            Ok(0)
        }
        Command::Ablate { axis } => {
            let axis: AblationAxis = axis.parse()?;
            let rows = run_ablate(cfg, axis)?;
            println!(
                "{:<22} {:>14} {:>10} {:>10}",
                "value", "attack-queries", "asr", "mean-sim"
            );
            for row in &rows {
                let asr = first_asr(&row.report)
                    .map(|v| format!("{v:.2}"))
                    .unwrap_or_else(|| "n/a".into());
                let sim = row
                    .report
                    .mean_similarity
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into());
                println!(
                    "{:<22} {:>14} {:>10} {:>10}",
                    row.axis_value, row.attack_queries, asr, sim
                );
            }
            Ok(0)
        }
    }
}

fn exit_code_for(err: &CemaError) -> u8 {
    match err {
        CemaError::Config(_)
        | CemaError::InvalidInput(_)
        | CemaError::InvalidDataset(_)
        | CemaError::InvalidVictimConfig(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            let code = exit_code_for(&err);
            let payload = serde_json::json!({
                "error": { "kind": format!("{err:?}").split('(').next().unwrap_or("unknown"), "message": err.to_string(), "exit_code": code }
            });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}
