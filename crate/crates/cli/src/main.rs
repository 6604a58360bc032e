//! `irevnet`: train, invert and analyse invertible networks from the shell.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use irevnet::DType;

#[derive(Debug, Parser)]
#[command(
    name = "irevnet",
    version,
    about = "Invertible coupling-layer networks: training, inversion and analysis"
)]
pub struct Cli {
    /// Seed for every random choice (initialization, shuffling, noise, probes).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Request bitwise-reproducible execution. All kernels are already
    /// single-threaded with a fixed reduction order; the flag is recorded in
    /// outputs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Element type for networks built from a preset or config. Checkpoints
    /// carry their own type.
    #[arg(long, global = true)]
    pub dtype: Option<DType>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from a TOML experiment file.
    Train(commands::TrainArgs),
    /// Round-trip images or noise through the network and report the relative error.
    Invert(commands::InvertArgs),
    /// Decode a straight path between two images in feature space.
    Interpolate(commands::InterpolateArgs),
    /// Singular values of the network Jacobian at one input.
    Spectrum(commands::SpectrumArgs),
    /// Linear and 1-NN probes of spatially averaged features at several depths.
    Probe(commands::ProbeArgs),
    /// Probe accuracy after projecting features onto leading principal components.
    Pca(commands::PcaArgs),
    /// Describe a checkpoint or preset.
    Info(commands::NetArgs),
}

/// Error raised for bad invocations and configurations (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage/configuration problems, 3 for corrupt data or checkpoints,
/// 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use irevnet::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::InvalidArgument(_) => 2,
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                E::Io { .. }
                | E::Format { .. }
                | E::Checkpoint(_)
                | E::LabelOutOfRange { .. }
                | E::DataLength { .. } => 3,
                _ => 1,
            };
        }
    }
    1
}

#[derive(Debug)]
pub struct Global {
    pub seed: u64,
    pub deterministic: bool,
    pub dtype: Option<DType>,
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let global = Global {
        seed: cli.seed,
        deterministic: cli.deterministic,
        dtype: cli.dtype,
        out: cli.out,
    };
    match commands::run(&global, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
