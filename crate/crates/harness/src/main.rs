use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use safecover_harness::config::{parse_seeds, ExperimentConfig};
use safecover_harness::oracle::compute_oracle;
use safecover_harness::report::write_report;
use safecover_harness::{run_seed, sweep, RunStatus};

#[derive(Parser)]
#[command(name = "safecover", version, about = "Run and report safe multi-agent coverage experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration on one seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one configuration over many seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range `a..b` or comma list; defaults to the config's seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run seeds one after another.
        #[arg(long)]
        serial: bool,
    },
    /// Compute oracle baselines on the true environment of one seed.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run records into CSV tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, e: impl std::fmt::Display) -> Self {
        Self { kind, message: e.to_string() }
    }
}

fn config(path: &std::path::Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| Failure::new("config", format!("{e:#}")))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { config: path, seed, out } => {
            let cfg = config(&path)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let rec = run_seed(&cfg, seed);
            let file = rec.write_to(&out).map_err(|e| Failure::new("io", format!("{e:#}")))?;
            println!("{}", file.display());
            match rec.status {
                RunStatus::Failed => Err(Failure::new("run", rec.error.unwrap_or_default())),
                _ => Ok(()),
            }
        }
        Command::Sweep { config: path, seeds, out, serial } => {
            let cfg = config(&path)?;
            let seeds = match seeds {
                Some(s) => parse_seeds(&s).map_err(|e| Failure::new("config", format!("{e:#}")))?,
                None => cfg.seeds.expand().map_err(|e| Failure::new("config", format!("{e:#}")))?,
            };
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let records = sweep(&cfg, &seeds, !serial);
            for rec in &records {
                let file = rec.write_to(&out).map_err(|e| Failure::new("io", format!("{e:#}")))?;
                println!("{}", file.display());
            }
            Ok(())
        }
        Command::Oracle { config: path, seed, out } => {
            let cfg = config(&path)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let rec = compute_oracle(&cfg, seed).map_err(|e| Failure::new("run", format!("{e:#}")))?;
            let file = rec.write_to(&out).map_err(|e| Failure::new("io", format!("{e:#}")))?;
            println!("{}", file.display());
            Ok(())
        }
        Command::Report { input, out } => {
            for file in write_report(&input, &out).map_err(|e| Failure::new("io", format!("{e:#}")))? {
                println!("{}", file.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": "usage", "message": e.to_string().trim_end()}}));
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"error": {"kind": f.kind, "message": f.message}}));
            ExitCode::from(if matches!(f.kind, "config" | "usage") { 2 } else { 1 })
        }
    }
}
