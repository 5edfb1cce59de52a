//! Command-line front end for the experiment harness.

use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use eoppg::env::sample_dataset;
use eoppg::experiments::{self, ExperimentConfig, ExperimentKind, Preset};
use eoppg::optimizer::ascend;
use eoppg::{Error, EstimatorKind, LqBenchmark};

#[derive(Parser)]
#[command(name = "eoppg", version, about = "Off-policy policy-gradient experiments on the LQ benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file overriding the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `paper` (full size) or `ci` (desk scale).
    #[arg(long)]
    preset: Option<Preset>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Gradient MSE of each estimator at a fixed θ.
    Mse(Common),
    /// Projected gradient ascent followed by regret.
    Regret(Common),
    /// EOPPG with corrupted nuisance models.
    Robustness(Common),
    /// One ascent run; writes the trace.
    Ascend {
        #[command(flatten)]
        common: Common,
        /// Number of behavior trajectories.
        #[arg(long, default_value_t = 1600)]
        n: usize,
        #[arg(long, default_value = "eoppg")]
        estimator: EstimatorKind,
    },
    /// Exact value, gradient and regret on a grid of θ.
    Oracle {
        #[arg(long, default_value_t = 50)]
        horizon: usize,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        /// Comma-separated θ values.
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,0.8,1,1.3,2")]
        theta: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_for(kind: ExperimentKind, common: &Common) -> eoppg::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path, Some(kind), common.preset)?,
        None => ExperimentConfig::preset(kind, common.preset.unwrap_or_default()),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out = Some(out.clone());
    }
    if let Some(workers) = common.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn sink(path: Option<&PathBuf>) -> eoppg::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

enum Failure {
    Config(Error),
    Estimators(f64, f64),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e)
    }
}

fn experiment(kind: ExperimentKind, common: &Common) -> Result<(), Failure> {
    let config = config_for(kind, common)?;
    let rows = experiments::run(&config)?;
    experiments::write_csv(&rows, sink(config.out.as_ref())?)?;
    let bench = config.benchmark;
    let summaries = experiments::summarize(&rows, &[bench.analytic_gradient(config.theta)]);
    experiments::write_summary(&summaries, io::stderr().lock())?;
    let failed = experiments::failure_fraction(&rows);
    if failed > config.max_failure_fraction {
        return Err(Failure::Estimators(failed, config.max_failure_fraction));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Mse(c) => experiment(ExperimentKind::Mse, &c),
        Command::Regret(c) => experiment(ExperimentKind::Regret, &c),
        Command::Robustness(c) => experiment(ExperimentKind::Robustness, &c),
        Command::Ascend { common, n, estimator } => {
            let config = config_for(ExperimentKind::Regret, &common)?;
            let bench = config.benchmark;
            let ascent = config.ascent.to_config(estimator, &config.estimator)?;
            let data = sample_dataset(&bench, &bench.behavior_policy(), n, config.seed)?;
            let trace = ascend(&data, &bench.target_policy(0.0), &bench.behavior_policy(), &ascent, config.seed)
                .map_err(|e| Failure::Estimators(1.0, config.max_failure_fraction).or_log(e))?;
            trace.write_csv(0, &bench, sink(config.out.as_ref())?)?;
            eprintln!("final θ = {}, regret = {:e}", trace.final_theta[0], bench.regret(trace.final_theta[0]));
            Ok(())
        }
        Command::Oracle { horizon, sigma, theta, out } => {
            if horizon == 0 || sigma.is_nan() || sigma <= 0.0 {
                return Err(Failure::Config(Error::Config("horizon must be positive and sigma > 0".into())));
            }
            let bench = LqBenchmark {
                horizon,
                sigma,
                ..LqBenchmark::default()
            };
            let mut w = csv::Writer::from_writer(sink(out.as_ref())?);
            w.write_record(["theta", "value", "gradient", "regret"]).map_err(Error::from)?;
            for t in theta {
                w.write_record([
                    format!("{t:e}"),
                    format!("{:e}", bench.analytic_value(t)),
                    format!("{:e}", bench.analytic_gradient(t)),
                    format!("{:e}", bench.regret(t)),
                ])
                .map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
            Ok(())
        }
    }
}

impl Failure {
    fn or_log(self, e: Error) -> Failure {
        eprintln!("error: {e}");
        self
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Estimators(frac, tol)) => {
            eprintln!("error: {:.1}% of rows failed (tolerance {:.1}%)", frac * 100.0, tol * 100.0);
            ExitCode::from(2)
        }
    }
}
