use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lsm_core::pipeline::{write_scene, Pipeline, PipelineConfig, PipelineError, Stage};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Ingest,
    Diagnose,
    Sample,
    Train,
    Evaluate,
    Map,
    Report,
    Synth,
    /// Every pipeline stage from ingest to report.
    All,
}

/// Landslide susceptibility mapping pipeline.
#[derive(Debug, Parser)]
#[command(name = "lsm", version)]
struct Cli {
    /// Stage to run.
    stage: Command,
    /// Pipeline config (JSON). Optional for `synth`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the sampling seed (for `synth`, the scene seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `paths.output_dir` (`synth`: ./scene).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None if matches!(cli.stage, Command::Synth) => PipelineConfig::default(),
        None => return Err(PipelineError::Validation("--config is required for this stage".into())),
    };
    if let Command::Synth = cli.stage {
        if let Some(seed) = cli.seed {
            cfg.synth.seed = seed;
        }
        let dir = cli.out.unwrap_or_else(|| PathBuf::from("scene"));
        let record = write_scene(&cfg.synth, &dir)?;
        log::info!("wrote {} files to {} in {:.2}s", record.outputs.len(), dir.display(), record.seconds);
        return Ok(());
    }
    if let Some(seed) = cli.seed {
        cfg.sampling.seed = seed;
    }
    let out = cli.out.unwrap_or_else(|| cfg.paths.output_dir.clone());
    let pipeline = Pipeline::new(cfg, out);
    let stages: Vec<Stage> = match cli.stage {
        Command::Ingest => vec![Stage::Ingest],
        Command::Diagnose => vec![Stage::Diagnose],
        Command::Sample => vec![Stage::Sample],
        Command::Train => vec![Stage::Train],
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Map => vec![Stage::Map],
        Command::Report => vec![Stage::Report],
        Command::All => Stage::PIPELINE.to_vec(),
        Command::Synth => unreachable!(),
    };
    pipeline.run_stages(&stages)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
