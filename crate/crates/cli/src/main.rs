use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use flowforge_cli::args::{Cli, Command, RunConfig};
use flowforge_cli::commands;
use flowforge_cli::error::{CliError, EXIT_USAGE};

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Generate(a) => commands::cmd_generate(&a),
        Command::Verify(a) => commands::cmd_verify(&RunConfig::from_args(&a)?),
        Command::Bench(a) => commands::cmd_bench(&RunConfig::from_args(&a)?),
        Command::Model(a) => commands::cmd_model(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            return ExitCode::from(if ok { 0 } else { EXIT_USAGE as u8 });
        }
    };
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
