mod args;
mod commands;
mod io;
mod verify;

use std::process::ExitCode;

use cafe_core::cafe::Verdict;
use cafe_core::error::Error;
use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

const EXIT_ERROR: u8 = 1;
const EXIT_RESIDUAL: u8 = 2;

fn configure_threads() -> Result<(), Error> {
    let Ok(text) = std::env::var("CAFE_THREADS") else {
        return Ok(());
    };
    let threads: usize = text.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::new(
            "cli",
            format!("CAFE_THREADS must be a positive integer, got `{text}`"),
            None,
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::new("cli", format!("thread pool: {e}"), None))
}

fn run(cli: Cli) -> Result<Option<Verdict>, Error> {
    configure_threads()?;
    match cli.command {
        Command::Verify(a) => return verify::run(&a),
        Command::Generate(a) => commands::generate(&a)?,
        Command::Compare(a) => commands::compare_sources(&a)?,
        Command::Bench(a) => commands::bench(&a)?,
        Command::Perturb(a) => commands::perturb(&a)?,
        Command::Sweep(a) => commands::sweep(&a)?,
        Command::Train(a) => commands::train_model(&a)?,
        Command::Serve(a) => commands::serve_model(&a)?,
    }
    Ok(None)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_ERROR),
            };
        }
    };
    match run(cli) {
        Ok(Some(Verdict::ResidualInfluence)) => ExitCode::from(EXIT_RESIDUAL),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
