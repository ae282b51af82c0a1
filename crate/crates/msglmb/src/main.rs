use std::process::ExitCode;

use clap::Parser;
use msglmb::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MSGLMB_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("msglmb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
