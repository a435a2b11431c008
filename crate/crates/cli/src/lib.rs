//! The `dino4d` command-line harness.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pointmap_io;

use args::{Cli, Command};
pub use error::{CliError, CliResult};
use manifest::RunManifest;

/// Environment variable selecting the log level (`error`, `info` or `debug`).
pub const LOG_ENV: &str = "DINO4D_LOG";

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs a parsed command line; `argv` is echoed into the run manifest.
pub fn run(cli: &Cli, argv: Vec<String>) -> CliResult<RunManifest> {
    match &cli.command {
        Command::Gen(a) => commands::gen(a, argv),
        Command::Train(a) => commands::train_cmd(a, argv),
        Command::Eval(a) => commands::eval_cmd(a, argv),
        Command::Refine(a) => commands::refine_cmd(a, argv),
        Command::Export(a) => commands::export_cmd(a, argv),
    }
}
