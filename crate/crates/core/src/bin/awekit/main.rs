//! `awekit` command-line interface.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 missing
//! file, 4 I/O, 5 invalid data, 6 shape, 7 numerical (including a failed
//! gradient check), 8 insufficient data, 9 checkpoint, 10 configuration.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use awekit::Error;
use commands::GradcheckFailed;
use config::resolve;

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(a) => commands::train(&resolve(&a, a.config.as_deref())?),
        Command::Embed(a) => commands::embed(&resolve(&a, a.config.as_deref())?),
        Command::Search(a) => commands::search_cmd(&resolve(&a, a.config.as_deref())?),
        Command::Evaluate(a) => commands::evaluate_cmd(&resolve(&a, a.config.as_deref())?),
        Command::LayerSweep(a) => commands::layer_sweep(&resolve(&a, a.config.as_deref())?),
        Command::Gradcheck(a) => commands::gradcheck(&resolve(&a, a.config.as_deref())?),
        Command::Synth(a) => commands::synth(&resolve(&a, a.config.as_deref())?),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return e.family().exit_code() as u8;
    }
    if err.downcast_ref::<GradcheckFailed>().is_some() {
        return awekit::ErrorFamily::Numerical.exit_code() as u8;
    }
    1
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
