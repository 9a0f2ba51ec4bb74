use std::process::ExitCode;

use clap::Parser;
use cqed_projection::cli::{run_cli, Cli};

/// Exit status when a numerical abort left partial outputs. clap uses 2 for
/// usage errors.
const PARTIAL_OUTPUT: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run_cli(&cli) {
        Ok(summary) => {
            println!("{}", summary.line());
            if summary.partial.is_some() {
                ExitCode::from(PARTIAL_OUTPUT)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
