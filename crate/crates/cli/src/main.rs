use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tcindiff::pwl::Method;
use tcindiff_cli::{apply_overrides, load_config, report, run, CliError, Command, Overrides};

/// Indifference prices, superhedging bounds and optimal strategies under
/// proportional transaction costs.
#[derive(Parser)]
#[command(name = "tcindiff", version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Configuration file
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    /// Grid size; number of scenarios for `simulate`
    #[arg(long)]
    n: Option<usize>,
    /// Grid size for every command
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Successor choices such as "uudd"
    #[arg(long)]
    scenario: Option<String>,
    /// Report file; defaults to output.path, then stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(&cli.config)?;
    let overrides = Overrides {
        method: cli.method,
        n: cli.n,
        grid: cli.grid,
        seed: cli.seed,
        scenario: cli.scenario.clone(),
    };
    let config = apply_overrides(&config, cli.command, &overrides)?;
    let out = cli.out.clone().or_else(|| config.output.path.as_ref().map(PathBuf::from));
    let rep = run(cli.command, &config)?;
    for line in &rep.summary {
        eprintln!("{line}");
    }
    let csv = rep.table.to_csv();
    match out {
        Some(path) => report::write_atomic(&path, &csv)
            .map_err(|source| CliError::Io { path: path.display().to_string(), source })?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
