//! Command-line parsing and dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use nullcal::calibration::TestStatistic;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::stages::{self, Context, TrainStage};

pub const THREADS_ENV: &str = "NULLCAL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nullcal", version, about = "Range/null posterior calibration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` from the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Top-level seed, overriding `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training stage: range, null-ddpm or null-vae.
    #[arg(long, global = true)]
    pub stage: Option<String>,
    /// Statistics for sbc, overriding the configuration.
    #[arg(long, global = true, value_enum)]
    pub stat: Option<StatChoice>,
    /// Also emit the map averaged over the test split.
    #[arg(long, global = true)]
    pub average: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    Gen,
    Train,
    Sbc,
    Map,
    Sweep,
    Report,
    RunAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatChoice {
    L2,
    Peak,
    Both,
}

impl StatChoice {
    pub fn statistics(self) -> Vec<TestStatistic> {
        match self {
            StatChoice::L2 => vec![TestStatistic::L2Norm],
            StatChoice::Peak => vec![TestStatistic::PeakRatio],
            StatChoice::Both => vec![TestStatistic::L2Norm, TestStatistic::PeakRatio],
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let stage = cli.stage.as_deref().map(TrainStage::parse).transpose()?;
    if stage.is_some() && cli.command != Command::Train {
        return Err(CliError::Config("--stage applies only to train".into()));
    }
    let mut ctx = Context::new(cfg, &out)?;
    match cli.command {
        Command::Gen => stages::gen(&mut ctx),
        Command::Train => stages::train(&mut ctx, stage),
        Command::Sbc => {
            let stats = cli
                .stat
                .map_or_else(|| ctx.cfg.sbc.statistics.clone(), StatChoice::statistics);
            stages::sbc(&mut ctx, &stats)
        }
        Command::Map => {
            let average = cli.average || ctx.cfg.map.average;
            stages::map(&mut ctx, average)
        }
        Command::Sweep => stages::sweep(&mut ctx),
        Command::Report => stages::report(&mut ctx),
        Command::RunAll => stages::run_all(&mut ctx),
    }
}
