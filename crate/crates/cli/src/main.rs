use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use frugal_cli::{commands, config, CliError, Outcome};

#[derive(Parser)]
#[command(name = "frugal", version, about = "Information-constrained control of linear-Gaussian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Problem configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimize a strategy and write solution.json.
    Solve,
    /// Solve a (C_s, C_b) grid and write sweep.csv and boundary.csv.
    Sweep,
    /// Enumerate equally good strategies and write family.json and ellipses.csv.
    Family,
    /// Run rollouts and empirical costs and write simulate.json and rollouts/.
    Simulate,
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Input("--config PATH is required".into()))?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Input("--jobs: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Input(format!("--jobs: {e}")))?;
    }
    let problem = config::load(path, cli.seed)?;
    match cli.command {
        Command::Solve => commands::solve(&problem, &cli.out),
        Command::Sweep => commands::sweep(&problem, &cli.out),
        Command::Family => commands::family(&problem, &cli.out),
        Command::Simulate => commands::simulate(&problem, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(outcome) => {
            if let Outcome::NotConverged(msg) = &outcome {
                eprintln!("warning: {msg}");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
