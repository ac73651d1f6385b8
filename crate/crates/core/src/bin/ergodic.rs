use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ergodic_core::pipeline::{emit_plots, run_pipeline_with, PipelineConfig, RunManifest};

/// Batch solver for ergodic singular control with a stochastic factor.
#[derive(Parser)]
#[command(name = "ergodic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for a JSON config and write all artifacts.
    Solve {
        /// Run configuration (JSON).
        config: PathBuf,
        /// Overrides `output_dir` from the config and the OUTPUT_DIR variable.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Skip the Monte Carlo stage.
        #[arg(long)]
        no_sim: bool,
        /// Run only the named checks (repeatable).
        #[arg(long = "check", value_name = "NAME")]
        checks: Vec<String>,
    },
    /// Write plotting scripts for an existing run.
    Plots {
        /// `manifest.json` of a finished run.
        manifest: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECKS: u8 = 4;

fn solve(config: PathBuf, output_dir: Option<PathBuf>, no_sim: bool, checks: Vec<String>) -> ExitCode {
    let mut cfg = match PipelineConfig::from_file(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(dir) = output_dir.or_else(|| std::env::var_os("OUTPUT_DIR").map(PathBuf::from)) {
        cfg.output_dir = dir;
    }
    if !checks.is_empty() {
        cfg.checks = Some(checks);
    }
    let manifest = match run_pipeline_with(&cfg, !no_sim) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Err(e) = emit_plots(&manifest) {
        eprintln!("warning: plot scripts not written: {e}");
    }
    report(&manifest)
}

fn report(m: &RunManifest) -> ExitCode {
    println!("model       {}", m.model);
    println!("alpha       {:.6}", m.alpha);
    if let Some(l) = m.lambda_star {
        println!("lambda*     {l:.8}");
    }
    for (name, outcome) in &m.checks {
        println!("check       {name:<24} {outcome}");
    }
    println!("artifacts   {}", m.output_dir.display());
    if !m.all_checks_passed {
        ExitCode::from(EXIT_CHECKS)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Solve {
            config,
            output_dir,
            no_sim,
            checks,
        } => solve(config, output_dir, no_sim, checks),
        Command::Plots { manifest } => match RunManifest::load(&manifest).and_then(|mut m| {
            // artifacts live next to the manifest wherever the run was made from
            if let Some(dir) = manifest.parent() {
                m.output_dir = dir.to_path_buf();
            }
            emit_plots(&m)
        }) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}
