use std::process::ExitCode;

use clap::Parser;
use dsf::cli::{run, Cli};
use dsf::ExitStatus;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ExitStatus::Config as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dsf: {e}");
            ExitCode::from(e.exit_status() as u8)
        }
    }
}
