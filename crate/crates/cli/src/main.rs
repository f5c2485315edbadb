//! `icprobe`: generate stimuli, score them with a backend and analyse the results.

mod args;
mod commands;
mod error;
mod manifest;
mod report;
mod runio;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::{EXIT_OK, EXIT_VALIDATION};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::from(EXIT_OK),
                _ => ExitCode::from(EXIT_VALIDATION),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Probe(a) => commands::probe(a),
        Command::Bias(a) => commands::bias(a),
        Command::Congruency(a) => commands::congruency(a),
        Command::Repprobe(a) => commands::repprobe(a),
        Command::Report(a) => report::report(a),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
