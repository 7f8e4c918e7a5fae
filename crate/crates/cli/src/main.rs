mod args;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use config::{Common, RunConfig};
use dsm_core::{DsmError, ErrorClass};

const EXIT_HYPOTHESIS: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_USAGE: u8 = 3;

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Hypothesis => EXIT_HYPOTHESIS,
        ErrorClass::Numeric => EXIT_NUMERIC,
        ErrorClass::Input => EXIT_USAGE,
    }
}

fn build(cli: &Cli) -> Result<Option<RunConfig>, DsmError> {
    let common = Common {
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        format: cli.format.unwrap_or_default(),
    };
    if let Some(path) = &cli.config {
        if cli.command.is_some() {
            return Err(DsmError::input("--config replays a run; do not combine it with a subcommand"));
        }
        let mut cfg = RunConfig::from_file(path)?;
        if let Some(out) = &cli.out {
            cfg.out = out.clone();
        }
        if let Some(format) = cli.format {
            cfg.format = format;
        }
        return Ok(Some(cfg));
    }
    let cfg = match &cli.command {
        None => return Err(DsmError::input("no subcommand given; see `dsm --help`")),
        Some(Command::Problems) => {
            print!("{}", run::list_problems());
            return Ok(None);
        }
        Some(Command::Flow(a)) => config::flow(a, &common)?,
        Some(Command::Path(a)) => config::path(a, &common)?,
        Some(Command::Contract(a)) => config::contract(a, &common)?,
        Some(Command::Probe(a)) => config::probe(a, &common)?,
        Some(Command::Check(a)) => config::check(a, &common)?,
    };
    Ok(Some(cfg))
}

fn report_error(e: &DsmError) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let cfg = match build(&cli) {
        Ok(Some(cfg)) => cfg,
        Ok(None) => return ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            return ExitCode::from(exit_code(e.class()));
        }
    };
    match run::execute(&cfg) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(&e);
            ExitCode::from(exit_code(e.class()))
        }
    }
}
