mod args;
mod commands;
mod config;
mod error;
mod plot;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use log::error;

use args::{Cli, Command};
use error::{CliError, CliResult};

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Fit(a) => commands::fit(a, g),
        Command::Evaluate(a) => commands::evaluate(a, g),
        Command::Compare(a) => commands::compare(a, g),
        Command::Cluster(a) => commands::cluster(a, g),
        Command::Plot(a) => commands::plot(a, g),
        Command::Synth(a) => commands::synth(a, g),
        Command::Pipeline(a) => commands::pipeline(a, g),
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
    init_logging(cli.global.verbose, cli.global.quiet);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(&cli)),
        Err(e) => Err(CliError::Input(format!("cannot start {} worker threads: {e}", cli.global.threads))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
