use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use clothlayer_cli::error::CliError;
use clothlayer_cli::Cli;

fn run(cli: &Cli) -> anyhow::Result<()> {
    cli.run().context("clothlayer")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
