//! `relcull` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod args;
mod commands;
mod config;
mod manifest;

use clap::Parser;

use crate::args::Cli;
use crate::commands::UsageError;
use crate::config::FileConfig;

const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("RELCULL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("RELCULL_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    let file = match FileConfig::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    match commands::dispatch(&cli, file, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args().collect()));
}
