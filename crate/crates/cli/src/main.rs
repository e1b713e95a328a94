use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conflab::lab::{
    emit_outputs, emit_refinement, emit_scan, run_perturbation_scan, run_refinement_study, run_rigidity,
    to_json_string, ExperimentConfig, RefinementChecks, RunSettings,
};
use conflab::sobolev::constants;
use conflab::Error;

const EXIT_INVALID_CONFIG: u8 = 4;
const EXIT_STAGE_FAILURE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "conflab", version, about = "Conformal first-eigenvalue experiments on discretized manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the dimensional constants as JSON.
    Constants {
        /// Dimensions to tabulate.
        #[arg(long = "n", value_delimiter = ',', default_values_t = [3usize, 4, 5, 6])]
        dimensions: Vec<usize>,
    },
    /// Run the rigidity-gap pipeline once.
    Rigidity(Common),
    /// Rerun the pipeline for random perturbations of the centered potential.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Maximum number of trials running at once.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Repeat discretization checks over successive grid doublings.
    Refine {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Skip the minimizer-based second-variation comparison.
        #[arg(long)]
        skip_second_variation: bool,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even if the potential or manifold fails the admissibility check.
    #[arg(long)]
    override_admissibility: bool,
    /// Accept grids above the node limit.
    #[arg(long)]
    override_size: bool,
    /// Record wall-clock time in the report (outputs are then not byte-reproducible).
    #[arg(long)]
    wall_clock: bool,
}

impl Common {
    /// Every failure here, unreadable files included, is a config error.
    fn load(&self) -> Result<(ExperimentConfig, RunSettings), Failure> {
        let mut config = ExperimentConfig::from_path(&self.config).map_err(Failure::Config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        let settings = RunSettings {
            override_admissibility: self.override_admissibility,
            override_size: self.override_size,
            record_wall_clock: self.wall_clock,
            ..RunSettings::default()
        };
        Ok((config, settings))
    }
}

enum Failure {
    Config(Error),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        match err {
            Error::Config { .. } | Error::InvalidSpec(_) | Error::Serialization(_) | Error::UnsupportedDimension(_) => {
                Failure::Config(err)
            }
            other => Failure::Run(other),
        }
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Constants { dimensions } => {
            let table = dimensions.into_iter().map(constants).collect::<Result<Vec<_>, _>>()?;
            print!("{}", to_json_string(&table)?);
            Ok(0)
        }
        Command::Rigidity(common) => {
            let (config, settings) = common.load()?;
            let report = run_rigidity(&config, &settings)?;
            let paths = emit_outputs(&report, &config.out)?;
            println!(
                "{}: {}",
                report.verdict.status.as_str(),
                report.verdict.diagnostics.as_deref().unwrap_or("")
            );
            println!("report written to {}", paths.report_json.display());
            Ok(report.exit_code() as u8)
        }
        Command::Scan {
            common,
            trials,
            workers,
        } => {
            let (config, mut settings) = common.load()?;
            settings.workers = workers;
            let scan = run_perturbation_scan(&config, trials, &settings)?;
            let paths = emit_scan(&scan, &config.out)?;
            let s = &scan.statistics;
            println!(
                "{} trials: {} gap-positive, {} inconclusive, {} failed; {} with simple lambda1",
                s.trials, s.gap_positive, s.gap_inconclusive, s.stage_failures, s.simple_lambda1
            );
            println!("scan written to {}", paths[0].display());
            Ok(scan.worst_verdict().exit_code() as u8)
        }
        Command::Refine {
            common,
            levels,
            skip_second_variation,
        } => {
            let (config, settings) = common.load()?;
            let checks = RefinementChecks {
                second_variation: !skip_second_variation,
                ..RefinementChecks::default()
            };
            let table = run_refinement_study(&config, levels, checks, &settings)?;
            let paths = emit_refinement(&table, &config.out)?;
            println!("observed orders: {:?}", table.orders);
            println!("table written to {}", paths[0].display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_INVALID_CONFIG } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(err)) => {
            eprintln!("invalid config: {err}");
            ExitCode::from(EXIT_INVALID_CONFIG)
        }
        Err(Failure::Run(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_STAGE_FAILURE)
        }
    }
}
