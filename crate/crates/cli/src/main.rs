//! `mininet`: train, evaluate and audit Mini-Net from a flat configuration.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O failure
  2  bad configuration or arguments
  3  data error (manifest, image decoding, record mismatch)
  4  numeric failure (non-finite loss or gradient)
  5  checkpoint missing or incompatible
  6  gradient audit failed
  7  output directory in use by another run

Settings are `key = value` lines; any key can be overridden with
`--key value` or `--key=value` after the subcommand.";

#[derive(Parser)]
#[command(name = "mininet", version, about = "Mini-Net segmentation: training, evaluation and audits", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the manifest's train split with early stopping on val.
    Train(Args),
    /// Score a checkpoint on one split.
    Eval(Args),
    /// Write predicted masks and TP/FP/FN overlays for one split.
    Predict(Args),
    /// Print parameter counts per module.
    Params(Args),
    /// Run the finite-difference gradient audit.
    Gradcheck(Args),
    /// Train one model per loss spec and compare them.
    Ablate(Args),
}

#[derive(clap::Args)]
struct Args {
    /// `--config FILE`, `--out DIR`, `--dice-literal` and `--<key> <value>`
    /// overrides, in any order.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "FLAGS"
    )]
    flags: Vec<String>,
}

type Handler = fn(&config::Config) -> Result<(), CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let (cmd, args): (Handler, Args) = match cli.command {
        Command::Train(a) => (commands::train, a),
        Command::Eval(a) => (commands::eval, a),
        Command::Predict(a) => (commands::predict, a),
        Command::Params(a) => (commands::params, a),
        Command::Gradcheck(a) => (commands::gradcheck, a),
        Command::Ablate(a) => (commands::ablate, a),
    };
    let (file, overrides) = config::split_flags(&args.flags)?;
    let cfg = config::build(file.as_deref(), &overrides)?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Core(mininet::Error::Dataset { failures, .. }) = &e {
                for f in failures {
                    eprintln!("record {}: {}", f.id, f.reason.replace('\n', "; "));
                }
            }
            eprintln!("{}", e.line());
            ExitCode::from(e.class().1)
        }
    }
}
