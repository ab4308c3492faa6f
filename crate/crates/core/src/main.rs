use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use contagion::io::{self, CliError, ResolvedConfig, RunOutput};

#[derive(Parser)]
#[command(
    name = "contagion",
    version,
    about = "Default contagion in large portfolios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the large-portfolio limit and write limit.csv.
    Limit(Common),
    /// Simulate finite portfolios and write paths.csv and aggregate.csv.
    Simulate(Common),
    /// Measure the distance between simulated and limiting default rates.
    Converge(Common),
    /// Write the three parameter families of limiting default rates.
    Figures(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override one config field, e.g. `--set sim.n_firms=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ResolvedConfig, CliError> {
        io::load_config(self.config.as_deref(), &self.overrides, self.seed)
    }
}

type Handler = fn(&ResolvedConfig, &Path) -> Result<RunOutput, CliError>;

fn run(cli: Cli) -> Result<RunOutput, CliError> {
    let (common, f): (&Common, Handler) = match &cli.command {
        Command::Limit(c) => (c, io::cli_limit),
        Command::Simulate(c) => (c, io::cli_simulate),
        Command::Converge(c) => (c, io::cli_converge),
        Command::Figures(c) => (c, io::cli_figures),
    };
    let resolved = common.resolve()?;
    f(&resolved, &common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            println!("{}", out.manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
