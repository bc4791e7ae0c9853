//! Command-line front end: complexity reports, forward execution on images
//! or seeded noise, receptive-field heatmaps, and the built-in verification
//! suites. Exit codes: 0 success, 1 validation/parse failure, 2
//! numerical-contract failure.

mod commands;
mod config;
mod errors;
mod pnm;
mod report;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{AnalyzeArgs, ErfArgs, ForwardArgs};

#[derive(Parser)]
#[command(
    name = "recconv-cli",
    about = "Recursive multi-scale convolution: analysis, execution, receptive fields, self tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report parameters, MACs and receptive fields against the closed forms
    Analyze {
        /// TOML config describing a mixer or a model
        config: PathBuf,
        /// Count interpolation cost as well (bilinear: 4 MACs per output element)
        #[arg(long)]
        include_resize_macs: bool,
        /// Input height (defaults: 64 for mixers, 224 for models)
        #[arg(long)]
        input_h: Option<usize>,
        /// Input width (defaults: 64 for mixers, 224 for models)
        #[arg(long)]
        input_w: Option<usize>,
    },
    /// Run a forward pass on an image or seeded noise
    Forward {
        config: PathBuf,
        /// Binary PGM (P5) or PPM (P6) input, 8-bit
        #[arg(long, conflicts_with = "seed")]
        image: Option<PathBuf>,
        /// Seed for a uniform-noise input instead of an image
        #[arg(long)]
        seed: Option<u64>,
        /// Square side of the seeded-noise input (defaults: 64 mixer, 224 model)
        #[arg(long)]
        size: Option<usize>,
        /// Write the raw output tensor (16-byte dims header + little-endian f64)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient-based receptive-field map of the center output unit
    Erf {
        config: PathBuf,
        /// Square input side
        #[arg(long)]
        size: usize,
        /// Write the normalized heatmap as a PGM file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in verification suites
    Selftest {
        /// Deliberately miscount one configuration to watch the suite fail
        #[arg(long, hide = true)]
        corrupt_param_count: bool,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    let result = match cli.command {
        Command::Analyze {
            config,
            include_resize_macs,
            input_h,
            input_w,
        } => commands::cmd_analyze(&AnalyzeArgs {
            config,
            include_resize_macs,
            input_h,
            input_w,
        }),
        Command::Forward {
            config,
            image,
            seed,
            size,
            out,
        } => commands::cmd_forward(&ForwardArgs {
            config,
            image,
            seed,
            size,
            out,
        }),
        Command::Erf { config, size, out } => commands::cmd_erf(&ErfArgs { config, size, out }),
        Command::Selftest {
            corrupt_param_count,
        } => commands::cmd_selftest(corrupt_param_count),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
