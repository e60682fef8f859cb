use std::process::ExitCode;

use clap::Parser;

use maskpos_cli::acceptance::{Suite, CRITERIA};
use maskpos_cli::args::{Cli, Command};
use maskpos_cli::commands::{self, CliError, CliResult, Status};

fn run(cli: Cli) -> CliResult<Status> {
    match cli.command {
        Command::Simulate(args) => {
            let summary = commands::simulate(&args)?;
            println!(
                "{} trials of mode {} written to {} ({} files)",
                summary.spec.trials,
                summary.spec.mode.name(),
                args.out.display(),
                summary.written.len()
            );
            Ok(Status::Success)
        }
        Command::Analytic(args) => {
            let path = commands::analytic(&args)?;
            println!("wrote {}", path.display());
            Ok(Status::Success)
        }
        Command::Compare(args) => {
            let report = commands::compare(&args)?;
            println!("{report}");
            Ok(if report.all_pass() {
                Status::Success
            } else {
                Status::Failure
            })
        }
        Command::Render(args) => {
            let path = commands::render(&args)?;
            println!("wrote {}", path.display());
            Ok(Status::Success)
        }
        Command::Verify(args) => {
            if let Some(bad) = args.only.iter().find(|k| !CRITERIA.iter().any(|(id, _)| id == *k)) {
                return Err(CliError::usage(format!("no criterion {bad}")));
            }
            let suite = Suite::new();
            let mut all = true;
            for &(id, _) in &CRITERIA {
                if !args.only.is_empty() && !args.only.contains(&id) {
                    continue;
                }
                let outcome = suite.run(id);
                all &= outcome.passed;
                println!("{outcome}");
            }
            Ok(if all { Status::Success } else { Status::Failure })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.status as u8)
        }
    }
}
