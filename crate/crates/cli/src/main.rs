mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{OutputFormat, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

/// Compare exposure-outcome associations with the duplication method.
#[derive(Debug, Parser)]
#[command(name = "dupcox", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Test whether exposures differ in their association with the outcome.
    Compare(Common),
    /// Separate Cox fit for each exposure on the original data.
    Fit(Common),
    /// Monte Carlo rejection rates for simulated scenarios.
    Simulate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the input data file.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Override the output file.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output format.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(p) = &self.input {
            config.input = Some(p.clone());
        }
        if let Some(p) = &self.output {
            config.output = Some(p.clone());
        }
        if let Some(s) = self.seed {
            config.seed = Some(s);
        }
        if let Some(f) = self.format {
            config.output_format = f;
        }
        Ok(config)
    }
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    let (common, runner): (&Common, fn(&RunConfig) -> Result<run::RunOutput, CliError>) = match &cli.command {
        Cmd::Compare(c) => (c, run::run_compare),
        Cmd::Fit(c) => (c, run::run_fit),
        Cmd::Simulate(c) => (c, run::run_simulate),
    };
    let config = common.load()?;
    let out = runner(&config)?;
    match &config.output {
        Some(path) => {
            std::fs::write(path, &out.file)
                .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
            print!("{}", out.stdout);
        }
        None if config.output_format == OutputFormat::Machine => print!("{}", out.file),
        None => print!("{}", out.stdout),
    }
    Ok(out.converged)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: a model fit did not converge; the report was written with diagnostics");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
