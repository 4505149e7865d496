//! Writes the fixture data sets as plain files for use with the CLI.
//!
//! Usage: trialscreen-fixtures <out-dir>

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let Some(out) = std::env::args_os().nth(1).map(PathBuf::from) else {
        eprintln!("usage: trialscreen-fixtures <out-dir>");
        return ExitCode::from(2);
    };
    match trialscreen_fixtures::write_data_files(&out) {
        Ok(()) => {
            println!("wrote fixtures to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
