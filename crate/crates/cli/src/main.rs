use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use spkf_nui::harness::{self, ExperimentConfig};
use spkf_nui::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "spkf-nui", version, about = "Monte-Carlo harness for nonlinear filtering with unknown inputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON). Defaults to the bundled rigid-link case study.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root; artifacts go to `<out>/<config hash>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config's Monte-Carlo run count.
    #[arg(long, global = true)]
    runs: Option<usize>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate and store the Monte-Carlo trajectories.
    Simulate,
    /// Run every configured filter over the stored trajectories.
    Estimate,
    /// Trace the error bound over the E grid and tune E.
    Bound,
    /// Write the summary table and per-step NMSE curves.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::case_study_1(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = cli.runs {
        cfg.runs = runs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Value, Error> {
    let cfg = load_config(cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let dir = harness::ArtifactDir::new(&out, &cfg);
    let mut summary = json!({
        "command": format!("{:?}", cli.command).to_lowercase(),
        "config_hash": dir.hash(),
        "artifacts": dir.root().display().to_string(),
    });
    match cli.command {
        Command::Simulate => {
            harness::run_simulate(&cfg, &out, cli.jobs)?;
            summary["runs"] = json!(cfg.runs);
        }
        Command::Estimate => {
            let s = harness::run_estimate(&cfg, &out, cli.jobs)?;
            summary["filters"] = json!(s.filters.iter().map(|k| k.name()).collect::<Vec<_>>());
        }
        Command::Bound => {
            let s = harness::run_bound(&cfg, &out, cli.jobs)?;
            summary["coverage"] = json!(s.candidates.iter().map(|c| json!({"e": c.e, "coverage": c.coverage})).collect::<Vec<_>>());
            match s.tune {
                Ok(t) => summary["chosen_e"] = json!(t.chosen),
                Err(_) => return Err(Error::NoFeasibleE),
            }
        }
        Command::Report => {
            let r = harness::run_report(&cfg, &out)?;
            summary["best_state"] = json!(r.best_state().name());
            summary["best_ui"] = json!(r.best_ui().map(|k| k.name()));
        }
    }
    Ok(summary)
}

/// `{"error": {"kind", "message", ["run"], ["step"], ["path"]}}`.
fn error_json(err: &Error) -> Value {
    let mut obj = json!({ "kind": err.kind(), "message": err.to_string() });
    let mut cur = err;
    loop {
        match cur {
            Error::AtRun { run, source } => {
                obj["run"] = json!(run);
                cur = source;
            }
            Error::AtStep { step, source } => {
                obj["step"] = json!(step);
                cur = source;
            }
            Error::ConfigInvalid { path, .. } => {
                obj["path"] = json!(path);
                break;
            }
            Error::MissingArtifact { path } => {
                obj["path"] = json!(path.display().to_string());
                break;
            }
            _ => break,
        }
    }
    json!({ "error": obj })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
