use std::process::ExitCode;

use clap::Parser;
use formctrl_cli::{configure_threads, load_config, run, Cli, CliError, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("formctrl: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<u8, CliError> {
    configure_threads()?;
    let config = match &cli.command {
        Command::Run { config } => load_config(config)?,
        Command::Experiment(c) => c.clone(),
    };
    let exec = run(&config)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&exec.machine).expect("json value"));
    } else {
        for line in &exec.summary {
            println!("{line}");
        }
        println!("{} in {:.2}s: {}", config.name(), exec.report.timing.wall_clock_seconds, if exec.pass { "pass" } else { "FAIL" });
    }
    Ok(exec.exit_code() as u8)
}
