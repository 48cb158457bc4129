use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    causalgp::cli::run(causalgp::cli::Cli::parse())
}
