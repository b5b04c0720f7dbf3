use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use riccati_nav::observer::Variant;
use riccati_nav::scenario::{parse_scenario, pe_audit, run_scenario, write_outputs, ScenarioConfig};
use riccati_nav::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Riccati observer scenarios: simulate, estimate, export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write timeseries.csv and metrics.json.
    Run {
        /// Scenario TOML file; optional when --preset is given.
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Output directory (default: the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Persistent-excitation sweep of the inertial bearing over the
    /// scenario's trajectory.
    PeAudit {
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Window length, s.
        #[arg(long)]
        delta: f64,
    },
}

fn load(config: Option<&PathBuf>, preset: Option<&str>) -> Result<ScenarioConfig> {
    let text = match config {
        Some(path) => std::fs::read_to_string(path)?,
        None if preset.is_some() => String::new(),
        None => {
            return Err(Error::InvalidArgument {
                name: "config",
                message: "give a scenario file or --preset".to_string(),
            })
        }
    };
    parse_scenario(&text, preset)
}

fn execute(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Run {
            config,
            preset,
            variant,
            out,
            seed,
        } => {
            let mut cfg = load(config.as_ref(), preset.as_deref())?;
            if let Some(v) = variant {
                cfg.observer.variant = v;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            cfg.validate()?;
            let started = Instant::now();
            let run = run_scenario(&cfg)?;
            let runtime = started.elapsed().as_secs_f64();
            let (csv, metrics) = write_outputs(&run, &cfg.output.dir)?;
            Ok(json!({
                "csv": csv,
                "metrics_file": metrics,
                "runtime_s": runtime,
                "metrics": run.metrics,
            }))
        }
        Command::PeAudit { config, preset, delta } => {
            let cfg = load(config.as_ref(), preset.as_deref())?;
            Ok(serde_json::to_value(pe_audit(&cfg, delta)?).expect("sweep serializes"))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
