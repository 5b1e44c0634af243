use clap::{Args, Parser, Subcommand};
use log::{error, info};
use ricl_core::harness::{self, Experiment, ExperimentConfig, Outcome};
use ricl_core::Error;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

/// Run the credit-assignment experiments and write their results as CSV.
#[derive(Debug, Parser)]
#[command(name = "ricl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact V, Q and A tables for a named policy.
    Solve(Common),
    /// Monte Carlo vs log-ratio advantage estimation error over a trajectory-count grid.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Also write every per-trial advantage estimate here.
        #[arg(long, value_name = "PATH")]
        estimates: Option<PathBuf>,
    },
    /// Critical-state scores along the canonical Key-Door path.
    Critical(Common),
    /// Training under oracle feedback of decreasing accuracy.
    Robust(Common),
    /// Advantage vs value-difference squared error at matched budgets.
    Mse(Common),
    /// Learning curves for the configured methods.
    Train(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed; overrides the file and `--set`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output CSV path (default: the config's output, else stdout).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set estimator.n_grid=[10,100]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "COUNT")]
    jobs: Option<usize>,
    /// Exit with status 3 if the experiment's acceptance properties do not hold.
    #[arg(long)]
    check: bool,
}

enum Failure {
    Config(String),
    Run(String),
    Violations(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load(experiment: Experiment, common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut overrides = vec![format!("experiment=\"{}\"", experiment.id())];
    overrides.extend(common.sets.iter().cloned());
    if let Some(seed) = common.seed {
        overrides.push(format!("root_seed={seed}"));
    }
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn emit(table: &harness::Table, path: Option<&PathBuf>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            table.write_to_path(p)?;
            info!("wrote {} rows to {}", table.rows.len(), p.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            table.write(&mut lock)?;
            lock.flush().map_err(Error::from)?;
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let (experiment, common, estimates) = match &cli.command {
        Command::Solve(c) => (Experiment::Solve, c, None),
        Command::Estimate { common, estimates } => (Experiment::Fig2, common, estimates.as_ref()),
        Command::Critical(c) => (Experiment::Fig6, c, None),
        Command::Robust(c) => (Experiment::Fig7, c, None),
        Command::Mse(c) => (Experiment::Table5, c, None),
        Command::Train(c) => (Experiment::Train, c, None),
    };
    let cfg = load(experiment, common)?;
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(Failure::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    info!("running {} with root seed {}", experiment.id(), cfg.root_seed);
    let outcome = harness::run(&cfg)?;
    emit(&outcome.table(), cfg.output.as_ref())?;
    if let (Some(path), Outcome::Fig2(out)) = (estimates, &outcome) {
        emit(&out.estimates_table(), Some(path))?;
    }
    if common.check {
        let violations = outcome.check();
        if !violations.is_empty() {
            return Err(Failure::Violations(violations));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            error!("{m}");
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Violations(v)) => {
            for m in &v {
                eprintln!("property violated: {m}");
            }
            ExitCode::from(3)
        }
    }
}
