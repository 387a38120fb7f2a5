use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stfe_cli::{describe, run, Command, RunOptions};

/// Stochastic thin-film laboratory.
#[derive(Debug, Parser)]
#[command(name = "stfe", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "stfe-out")]
    out: PathBuf,
    /// Worker threads for ensembles; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = RunOptions {
        config: args.config,
        seed: args.seed,
        out: args.out,
        threads: args.threads,
    };
    match run(args.command, &opts) {
        Ok(()) => {
            eprintln!("{}", describe(args.command, &opts));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stfe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
