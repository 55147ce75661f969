//! The `ilvr` command line: training, sampling, ILVR runs, evaluation,
//! manifest replay and the studio job service.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod model;
pub mod service;

use args::{Cli, Command};
use error::{CliError, CliResult};
use ilvr_core::metrics::format_table;

/// Executes one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => {
            let m = commands::train::run(&args)?;
            eprintln!("trained in {:.2}s; outputs in {}", m.duration_secs, args.out.display());
        }
        Command::Sample(args) => {
            let m = commands::sample::run(&args)?;
            eprintln!("{} file(s) in {}", m.outputs.len(), args.out.display());
        }
        Command::Ilvr(args) => {
            commands::ilvr::run(&args)?;
            let text = std::fs::read_to_string(args.out.join(commands::REPORTS_TXT))?;
            let summary: String = text
                .lines()
                .filter(|l| !l.starts_with("lowfreq_error "))
                .map(|l| format!("{l}\n"))
                .collect();
            print!("{summary}");
        }
        Command::Eval(args) => {
            let (_, reports) = commands::eval::run(&args)?;
            print!("{}", format_table(&reports));
        }
        Command::Toy(args) => {
            let m = commands::toy::run(&args)?;
            eprintln!("{} file(s) in {}", m.outputs.len(), args.out.display());
        }
        Command::Replay(args) => {
            commands::replay::run(&args)?;
            if args.verify {
                eprintln!("replay matches {}", args.manifest.display());
            }
        }
        Command::Serve(args) => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::data(format!("starting runtime: {e}")))?;
            rt.block_on(service::serve(&args))?;
        }
    }
    Ok(())
}
