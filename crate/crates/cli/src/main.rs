//! `ddsq`: runs the simulator pipeline from a JSON experiment config.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::output::{Manifest, Outputs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Module(#[from] ddsq::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) | CliError::Module(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ddsq", version, about = "DDS transmon control-chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; defaults apply to omitted keys.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set rb.n_seeds=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (same as `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: config, then $DDSQ_OUTPUT_DIR, then ./ddsq-out].
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads for sequence simulation [default: all cores].
    #[arg(short, long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize and quantize a tone schedule into waveform files.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Schedule JSON with `tones` and/or `gates`.
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Tune up and run one RB campaign.
    Rb(Common),
    /// EPG versus gate length, full-scale fraction or sample rate.
    Sweep(Common),
    /// Phase-noise spectra, dephasing PSDs and infidelity floors.
    Noise(Common),
    /// Full-DDS campaign with readout droop and background correction.
    Distortion(Common),
    /// Calibrate pulse amplitudes, DRAG and Stark correction.
    Tuneup(Common),
}

fn run(command: Command) -> Result<Vec<PathBuf>, CliError> {
    let (name, common, schedule) = match command {
        Command::Synth { common, schedule } => ("synth", common, Some(schedule)),
        Command::Rb(c) => ("rb", c, None),
        Command::Sweep(c) => ("sweep", c, None),
        Command::Noise(c) => ("noise", c, None),
        Command::Distortion(c) => ("distortion", c, None),
        Command::Tuneup(c) => ("tuneup", c, None),
    };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = config::load(common.config.as_deref(), &overrides)?;
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let mut outputs: Outputs = match name {
        "synth" => commands::synth(&cfg, schedule.as_deref().expect("synth has a schedule"))?,
        "rb" => commands::rb(&cfg)?,
        "sweep" => commands::sweep_cmd(&cfg)?,
        "noise" => commands::noise(&cfg)?,
        "distortion" => commands::distortion(&cfg)?,
        "tuneup" => commands::tuneup(&cfg)?,
        _ => unreachable!("every subcommand is dispatched"),
    };
    outputs.add_json("config.json", &cfg);
    let manifest = Manifest::new(name, &cfg.canonical_json(), cfg.seed, outputs.names());
    outputs.add_json("manifest.json", &manifest);
    outputs.commit(&config::output_dir(common.out.as_deref(), &cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
