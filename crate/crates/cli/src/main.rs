use std::process::ExitCode;

use clap::Parser;

use fastvie_cli::args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match fastvie_cli::run(&cli.command) {
        Ok(results) => {
            if !matches!(cli.command, Command::Selftest(_)) {
                println!("{}", serde_json::to_string_pretty(&results).unwrap_or_default());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fastvie {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
