use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match wsol::cli::run(wsol::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
