use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use hetgat_cli::{cmd_bench, cmd_gen, cmd_spectral_dump, cmd_train, CliError};

#[derive(Parser)]
#[command(
    name = "hetgat",
    version,
    about = "Heterogeneous graph attention with spectral positional encodings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph from a generator spec.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate over several trials.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Compare every architecture with and without positional encodings.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write the Laplacian eigenbasis of a graph as JSON.
    SpectralDump {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Number of eigenpairs.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common } => cmd_gen(&common.config, &common.out, common.seed),
        Command::Train { common, trials } => {
            cmd_train(&common.config, &common.out, common.seed, trials).map(drop)
        }
        Command::Bench { common, trials } => {
            cmd_bench(&common.config, &common.out, common.seed, trials).map(drop)
        }
        Command::SpectralDump {
            config,
            graph,
            m,
            out,
        } => cmd_spectral_dump(config.as_deref(), graph.as_deref(), m, &out).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
