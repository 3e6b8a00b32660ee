use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spaceaudit::scenario::{self, RunOptions, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "spaceaudit", version, about = "Run storage-integrity audit scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and print its report.
    Run {
        file: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the final client ledger here.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Do not insert a check after each mutating command.
        #[arg(long)]
        no_auto_check: bool,
        /// Do not take a restore point after each client operation.
        #[arg(long)]
        no_auto_restore: bool,
    },
}

fn usage_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let Cmd::Run { file, report, ledger, seed, no_auto_check, no_auto_restore } = cli.command;

    let text = match fs::read_to_string(&file) {
        Ok(t) => t,
        Err(e) => return usage_error(format!("cannot read {}: {e}", file.display())),
    };
    let commands = match scenario::parse_scenario(&text) {
        Ok(c) => c,
        Err(e) => return usage_error(format!("{}: {e}", file.display())),
    };
    let options = RunOptions { auto_check: !no_auto_check, auto_restore: !no_auto_restore, seed };
    let result = scenario::run_scenario(&commands, options);

    match &report {
        Some(path) => {
            if let Err(e) = fs::write(path, &result.text) {
                return usage_error(format!("cannot write {}: {e}", path.display()));
            }
        }
        None => print!("{}", result.text),
    }
    if let (Some(path), Some(l)) = (&ledger, &result.ledger) {
        if let Err(e) = fs::write(path, l.save()) {
            return usage_error(format!("cannot write {}: {e}", path.display()));
        }
    }
    ExitCode::from(result.exit_code as u8)
}
