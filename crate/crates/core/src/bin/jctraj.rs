use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jc_trajectories::cli::{
    render, resolve, run_resolved, split_document, CliError, ExperimentConfig, OutputFormat, Preset,
    ResolvedConfig,
};
use jc_trajectories::Execution;

/// Quantum-trajectory simulations of a driven, damped Jaynes-Cummings system.
#[derive(Parser)]
#[command(name = "jctraj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a custom experiment and write its data.
    Run(RunArgs),
    /// Print the fully resolved configuration without running.
    Config(RunArgs),
    /// Regenerate a data file from its embedded configuration header.
    Rerun {
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    preset: Preset,
    /// Decay rates in units of g (comma separated).
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    /// Drive amplitude F in units of g (default gamma/2).
    #[arg(long = "F")]
    drive: Option<f64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fock_dim: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    t_star: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Adds a column of physical seconds for this coupling frequency.
    #[arg(long)]
    g_hz: Option<f64>,
}

impl From<RunArgs> for ExperimentConfig {
    fn from(a: RunArgs) -> Self {
        ExperimentConfig {
            preset: a.preset,
            gamma_list: a.gamma,
            drive: a.drive,
            trajectories: a.trajectories,
            seed: a.seed,
            fock_dim: a.fock_dim,
            dt: a.dt,
            t_final: a.t_final,
            t_star: a.t_star,
            output_path: a.output,
            format: a.format,
            g_hz: a.g_hz,
        }
    }
}

fn execute(resolved: &ResolvedConfig, output: Option<&PathBuf>) -> Result<(), CliError> {
    let table = run_resolved(resolved, Execution::Parallel, |k, total, gamma| {
        eprintln!("[{}/{}] gamma = {gamma}", k + 1, total);
    })?;
    let doc = render(resolved, &table);
    match output {
        Some(path) => std::fs::write(path, doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let config = ExperimentConfig::from(args);
            let resolved = resolve(&config)?;
            eprintln!("{}", serde_json::to_string(&resolved).expect("config serializes"));
            execute(&resolved, config.output_path.as_ref())
        }
        Command::Config(args) => {
            let resolved = resolve(&ExperimentConfig::from(args))?;
            println!("{}", serde_json::to_string_pretty(&resolved).expect("config serializes"));
            Ok(())
        }
        Command::Rerun { input, output } => {
            let doc = std::fs::read_to_string(&input)?;
            let (resolved, _) = split_document(&doc)?;
            execute(&resolved, output.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
