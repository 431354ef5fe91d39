use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = vcr_cli::Cli::parse();
    let mut out = std::io::stdout().lock();
    match vcr_cli::run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
