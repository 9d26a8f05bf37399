mod args;
mod commands;
mod error;
mod report;

use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Config};
use error::Result;

fn run(mut cli: Cli) -> Result<()> {
    if let Some(path) = cli.common.config.clone() {
        Config::load(&path)?.apply(&mut cli)?;
    }
    args::validate(&cli)?;
    let report = commands::run(&cli)?;
    match &cli.common.output {
        Some(p) => fs::write(p, report.render(cli.common.format)?)?,
        None => {
            let mut out = std::io::stdout().lock();
            report.write(cli.common.format, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
