use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use chromaflow::Mode;
use chromaflow_cli::{
    cmd_colorize, cmd_compare, cmd_evaluate, cmd_index, init_threads, ConfigArgs, ReferenceArgs,
};

#[derive(Parser)]
#[command(
    name = "chromaflow",
    version,
    about = "Reference-guided video colorization and temporal consistency metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct ConfigFlags {
    /// key=value config file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// CDC frame strides, e.g. 1,2,4
    #[arg(long, global = true, value_name = "LIST")]
    strides: Option<String>,
    /// Replace existing outputs
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Args)]
struct RefFlags {
    /// Reference color image
    #[arg(long, value_name = "PATH")]
    reference: Option<PathBuf>,
    /// Corpus index to retrieve a reference from
    #[arg(long, value_name = "PATH")]
    index: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a retrieval index from a directory of color images
    Index {
        corpus_dir: PathBuf,
        out_index: PathBuf,
    },
    /// Colorize a directory of numbered frames
    Colorize {
        frames_dir: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        refs: RefFlags,
    },
    /// Compute metrics for a colorized frame directory
    Evaluate {
        output_dir: PathBuf,
        ground_truth_dir: Option<PathBuf>,
    },
    /// Colorize in every mode and tabulate CDC and warp error
    Compare {
        frames_dir: PathBuf,
        #[command(flatten)]
        refs: RefFlags,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: chromaflow::Error| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let flags = cli.config;
    let resolved = ConfigArgs {
        config: flags.config,
        set: flags.set,
        mode: flags.mode,
        strides: flags.strides,
    }
    .resolve()?;
    let refs = |r: RefFlags| ReferenceArgs {
        reference: r.reference,
        index: r.index,
    };
    match cli.command {
        Command::Index {
            corpus_dir,
            out_index,
        } => {
            cmd_index(&corpus_dir, &out_index, &resolved.config, flags.overwrite)?;
        }
        Command::Colorize {
            frames_dir,
            out_dir,
            refs: r,
        } => {
            cmd_colorize(&frames_dir, &out_dir, &refs(r), &resolved, flags.overwrite)?;
        }
        Command::Evaluate {
            output_dir,
            ground_truth_dir,
        } => {
            cmd_evaluate(
                &output_dir,
                ground_truth_dir.as_deref(),
                &resolved.config,
                flags.overwrite,
            )?;
        }
        Command::Compare {
            frames_dir,
            refs: r,
        } => {
            cmd_compare(&frames_dir, &refs(r), &resolved.config)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
