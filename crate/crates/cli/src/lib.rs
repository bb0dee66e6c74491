//! `searisk` command line: synthetic or NOAA AIS in, congestion-risk
//! predictions and grounded per-cell reports out.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use searisk_core::nn::ModelKind;

use crate::config::{BackendKind, PipelineConfig};

/// Exit code when the consistency audit falls below the floor.
pub const EXIT_BELOW_FLOOR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "searisk", version, about = "Port congestion risk from AIS traffic")]
pub struct Cli {
    /// TOML pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for data generation and training (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Cap on node-days sent to report generation.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
    #[arg(long, global = true)]
    pub consistency_floor: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic daily AIS CSVs.
    Synth,
    /// Parse daily CSVs into the canonical record file.
    Ingest,
    /// Build daily graph snapshots, labels, correlations and the split.
    Build,
    /// Train one model and save its checkpoint.
    Train {
        #[arg(long, value_parser = parse_model)]
        model: ModelKind,
    },
    /// Score checkpoints on the test partition.
    Eval {
        /// Restrict to one model; default is every saved checkpoint.
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelKind>,
    },
    /// Extract evidence under the TGAT checkpoint and generate reports.
    Explain,
    /// Audit report directions against the evidence.
    Validate,
    /// Every step in order.
    RunAll,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: searisk_core::Error| e.to_string())
}

impl Cli {
    /// File config (or defaults) with the command-line overrides applied.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(kind) = self.backend {
            cfg.backend.kind = kind;
        }
        if let Some(limit) = self.limit {
            cfg.explain_limit = Some(limit);
        }
        if let Some(floor) = self.consistency_floor {
            cfg.consistency_floor = floor;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = cli.pipeline_config()?;
    let gate = |s: searisk_report::consistency::ConsistencySummary| {
        if s.passes(cfg.consistency_floor) {
            0
        } else {
            eprintln!("consistency {:.3} is below the floor {:.3}", s.rate, cfg.consistency_floor);
            EXIT_BELOW_FLOOR
        }
    };
    match &cli.command {
        Command::Synth => commands::synth(&cfg).map(|_| 0),
        Command::Ingest => commands::ingest(&cfg).map(|_| 0),
        Command::Build => commands::build(&cfg).map(|_| 0),
        Command::Train { model } => commands::train(&cfg, *model).map(|_| 0),
        Command::Eval { model } => commands::eval(&cfg, model.as_ref().map(std::slice::from_ref)).map(|_| 0),
        Command::Explain => commands::explain(&cfg).map(|_| 0),
        Command::Validate => commands::validate(&cfg).map(gate),
        Command::RunAll => commands::run_all(&cfg).map(gate),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(0)
        }
    }
}

/// Parse `argv` and run. Returns the process exit code: 0 on success, 1 on
/// failure, 2 on usage errors, 3 when consistency is below the floor.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
