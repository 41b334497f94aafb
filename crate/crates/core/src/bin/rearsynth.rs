use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rearsynth::pipeline::{Pipeline, PipelineConfig, Stage};
use rearsynth::Error;

/// Generate a weighted synthetic rear-end crash dataset.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// gen-fixtures, fit-profiles, fit-dists, fuse, model-refb, sample-refsb,
    /// match-simulate, ipf, validate or run-all.
    #[arg(long, default_value = "run-all")]
    stage: Stage,
    /// Number of synthetic crashes to generate.
    #[arg(long)]
    n_target: Option<usize>,
    /// Write per-crash 20 Hz tick logs.
    #[arg(long)]
    emit_tick_logs: bool,
}

fn run(cli: Cli) -> rearsynth::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed);
    cfg.out_dir = cli.out.or(cfg.out_dir);
    cfg.n_target = cli.n_target.or(cfg.n_target);
    cfg.emit_tick_logs |= cli.emit_tick_logs;
    Pipeline::new(cfg)?.run(cli.stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            match e {
                Error::Validation { .. } => ExitCode::from(2),
                Error::MissingInput { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
