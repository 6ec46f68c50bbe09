use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use v2gsim::pipeline::{run_stage, with_workers, write_artifacts, InputSource, PipelineError, RunConfig, Stage};

#[derive(Debug, Parser)]
#[command(name = "v2gsim", version, about = "Battery degradation under overnight V2G dispatch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true, env = "V2GSIM_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true, env = "V2GSIM_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "V2GSIM_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "V2GSIM_WORKERS")]
    workers: Option<usize>,
    /// Battery designs: built-in names or parameter file paths.
    #[arg(long, global = true, env = "V2GSIM_BATTERY", value_delimiter = ',')]
    battery: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic fleet trip log and its profile labels.
    GenFleet,
    /// Detect charging events.
    Ingest,
    /// Extract behavioral features and cluster vehicles.
    Cluster,
    /// Baseline degradation.
    Simulate,
    /// Degradation under the V2G strategy, plus dispatch.
    V2g,
    /// Capacity deltas, regressions and rank tests.
    Compare,
    /// Everything, plus a plain-text report.
    Report,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::GenFleet => Stage::GenFleet,
            Command::Ingest => Stage::Ingest,
            Command::Cluster => Stage::Cluster,
            Command::Simulate => Stage::Simulate,
            Command::V2g => Stage::V2g,
            Command::Compare => Stage::Compare,
            Command::Report => Stage::Report,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(b) = &cli.battery {
        cfg.batteries = b.clone();
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if matches!(cli.command, Command::GenFleet) && !matches!(cfg.input, InputSource::Fleetgen { .. }) {
        return Err(PipelineError::Config("gen-fleet needs a fleetgen input source".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Option<PipelineError>, PipelineError> {
    let cfg = load_config(cli)?;
    // Fail on unreadable battery files before any work.
    cfg.load_batteries()?;
    let stage = cli.command.stage();
    let (artifacts, deferred) = with_workers(cfg.workers, || run_stage(stage, &cfg))??;
    write_artifacts(&cfg.output_dir, &artifacts)?;
    log::info!("wrote {} artifacts to {}", artifacts.len(), cfg.output_dir.display());
    Ok(deferred)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(e)) | Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
