use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dbss::{ExperimentSpec, Method};
use dbss_cli::commands::{self, RunSpec};
use dbss_cli::error::EXIT_CONFIG;
use dbss_cli::{CliError, Result, SweepSpec};

#[derive(Debug, Parser)]
#[command(
    name = "dbss",
    version,
    about = "Joint deconvolution and blind source separation benchmarks"
)]
struct Cli {
    /// Global random seed (overrides the seed of the configuration file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving output files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic datasets from an experiment specification.
    Simulate {
        /// Number of independent datasets.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Run one method on one instance and print its criteria.
    Run {
        /// Solve a dataset file instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Method, overriding the configuration.
        #[arg(long)]
        method: Option<String>,
    },
    /// Run a Monte-Carlo sweep and write raw, summary and JSON reports.
    Sweep,
    /// Rebuild the summary and JSON reports from a raw CSV.
    Report {
        /// Raw CSV written by `sweep`.
        #[arg(long)]
        input: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { count } => {
            let spec: ExperimentSpec = match &cli.config {
                Some(path) => commands::load_json(path)?,
                None => ExperimentSpec::default(),
            };
            let seed = cli.seed.unwrap_or(spec.seed);
            for path in commands::simulate(spec, seed, count, &cli.out_dir)? {
                println!("{}", path.display());
            }
        }
        Command::Run { dataset, method } => {
            let mut spec: RunSpec = match &cli.config {
                Some(path) => commands::load_json(path)?,
                None => RunSpec::default(),
            };
            if let Some(m) = method {
                spec.method = m
                    .parse::<Method>()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
            if let Some(seed) = cli.seed {
                spec.experiment.seed = seed;
            }
            let instance = dataset.as_deref().map(commands::load_dataset).transpose()?;
            let report = commands::run(&spec, instance.as_ref())?;
            let ev = &report.evaluation;
            println!(
                "{} N_c={} N_s={} seed={}: delta_A={:.4} sdr_db={:.3} worst rel_err_pct={:.4} ({:.2}s)",
                report.method,
                report.n_channels,
                report.n_sources,
                report.seed,
                ev.delta_a,
                ev.sdr_db,
                ev.worst_relative_error(),
                report.seconds
            );
            println!(
                "{}",
                serde_json::to_string(&report).expect("report serializes")
            );
        }
        Command::Sweep => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| CliError::Config("sweep needs --config".into()))?;
            let mut spec: SweepSpec = commands::load_json(path)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            for path in commands::sweep(&spec, &cli.out_dir)? {
                println!("{}", path.display());
            }
        }
        Command::Report { input } => {
            for path in commands::report(&input, &cli.out_dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
