use std::process::ExitCode;

use bottomflag_cli::commands::{run, Cli, CliError};
use clap::error::ErrorKind;
use clap::Parser;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string())),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

/// One JSON line on stderr, then the mapped exit status.
fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string().trim_end() }));
    ExitCode::from(e.exit_code() as u8)
}
