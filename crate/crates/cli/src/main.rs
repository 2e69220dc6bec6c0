//! Command-line front end: induction runs, suspension orbits, Lyapunov
//! spectra, limit shapes, and the wandering-interval pipeline, with
//! deterministic text/CSV/SVG artifacts and a run manifest per invocation.

mod checkpoint;
mod commands;
mod manifest;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "iem",
    version,
    about = "Rauzy-Veech-Zorich renormalization for interval exchange maps"
)]
struct Cli {
    /// Output directory for artifacts and the manifest.
    #[arg(long, default_value = "iem-out", global = true)]
    out: std::path::PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the Rauzy class of a permutation pair and export the diagram.
    RauzyClass {
        /// Permutation pair, e.g. "A B C / C B A".
        pair: String,
    },
    /// Iterate the Rauzy-Veech induction and record the orbit.
    Induct(commands::InductArgs),
    /// Iterate the natural extension, recording suspension data.
    Suspend(commands::SuspendArgs),
    /// Estimate the Lyapunov spectrum of the Zorich cocycle.
    Lyapunov(commands::LyapunovArgs),
    /// Build broken-line shapes and their concave majorants.
    LimitShape(commands::LimitShapeArgs),
    /// Run the wandering-interval construction end to end.
    Wander(commands::WanderArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RauzyClass { pair } => commands::rauzy_class(&cli.out, pair),
        Command::Induct(args) => commands::induct(&cli.out, args),
        Command::Suspend(args) => commands::suspend(&cli.out, args),
        Command::Lyapunov(args) => commands::lyapunov(&cli.out, args),
        Command::LimitShape(args) => commands::limit_shape(&cli.out, args),
        Command::Wander(args) => commands::wander(&cli.out, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
