//! Command-line front end: run experiments, resume stopped ones, and run
//! the pinned benchmark presets.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 preset
//! acceptance failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bidbandit::config::ExperimentConfig;
use bidbandit::error::Error;
use bidbandit::presets;
use bidbandit::runner::{self, RunOptions};

#[derive(Parser)]
#[command(
    name = "bidbandit",
    version,
    about = "Batched-feedback bid optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for logs, snapshots, and reports. Defaults to the config's
    /// out_dir, or ./out.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Shard items across this many worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
        /// Stop after this round and write a resumable snapshot.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Continue a stopped run from its snapshot.
    Resume {
        snapshot: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Run a named benchmark experiment (bench-regret, snowball, exp3-equiv).
    Preset {
        name: String,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn options(
    common: &CommonOpts,
    config: Option<&ExperimentConfig>,
    stop_after: Option<u64>,
) -> RunOptions {
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| config.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    RunOptions {
        out_dir,
        seed_override: common.seed,
        parallel: common.parallel.max(1),
        stop_after,
    }
}

fn config_base_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run {
            config,
            common,
            stop_after,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let opts = options(&common, Some(&cfg), stop_after);
            let artifacts = runner::run(&cfg, &config_base_dir(&config), &opts)?;
            report_run(&artifacts);
            Ok(ExitCode::SUCCESS)
        }
        Command::Resume {
            snapshot,
            config,
            common,
            stop_after,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let opts = options(&common, Some(&cfg), stop_after);
            let artifacts = runner::resume(&snapshot, &cfg, &config_base_dir(&config), &opts)?;
            report_run(&artifacts);
            Ok(ExitCode::SUCCESS)
        }
        Command::Preset { name, common } => {
            let out_dir = options(&common, None, None).out_dir;
            let report = presets::run_preset(&name, common.seed, &out_dir)?;
            print!("{}", report.summary_text());
            if report.passed {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
    }
}

fn report_run(artifacts: &bidbandit::RunArtifacts) {
    println!(
        "{} after round {}: log {}, snapshot {}",
        if artifacts.completed {
            "completed"
        } else {
            "stopped"
        },
        artifacts.final_round,
        artifacts.event_log.display(),
        artifacts.snapshot.display()
    );
    for report in &artifacts.reports {
        println!("wrote {}", report.display());
    }
}
