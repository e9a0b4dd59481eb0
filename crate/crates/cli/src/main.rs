use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = vfgnn::Cli::parse();
    match vfgnn::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
