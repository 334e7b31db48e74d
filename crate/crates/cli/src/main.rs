mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use commands::{dispatch, Failure};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", Failure::usage(e.to_string().trim_end()).to_json());
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(report) => {
            let text = serde_json::to_string_pretty(&report).expect("serializable report");
            let mut out = std::io::stdout().lock();
            // a closed pipe downstream is not an error of ours
            let _ = writeln!(out, "{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(if f.validation { 2 } else { 3 })
        }
    }
}
