use std::process::ExitCode;

use clap::Parser;
use dino4d_cli::args::Cli;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    dino4d_cli::init_logging();
    match dino4d_cli::run(&cli, argv) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
