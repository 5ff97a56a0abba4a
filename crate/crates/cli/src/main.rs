//! Command-line driver for federated optimization experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedcorr::sim::{
    bound_report, contraction_report, fixed_point_summary, landscape, parse_grid, run_experiment,
    variance_report, write_landscape, write_metrics, write_metrics_to, Experiment,
    ExperimentConfig, MetricsFormat,
};
use fedcorr::{Error, ParamVector};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fedcorr", version, about = "Federated optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    H,
    Q,
    Bound,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write per-round metrics.
    Run {
        config: PathBuf,
        /// Metrics file; metrics go to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to the extension of --out, else csv.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Run clients of a round concurrently.
        #[arg(long, conflicts_with = "serial")]
        parallel: bool,
        /// Run clients of a round sequentially.
        #[arg(long)]
        serial: bool,
    },
    /// Print the global minimizer and closed-form fixed points as JSON.
    FixedPoint { config: PathBuf },
    /// Evaluate the round-map residual over a grid of points.
    Landscape {
        config: PathBuf,
        /// Axis ranges `lo:hi:n`, comma separated per dimension.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        /// Monte-Carlo trials per point (ignored for deterministic runs).
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Emit a contraction, variance, or bound report as JSON.
    Validate {
        config: PathBuf,
        #[arg(long, value_enum)]
        what: Analysis,
    },
}

#[derive(Serialize)]
struct RunSummary<'a> {
    rounds: usize,
    final_x: &'a ParamVector,
    metrics: &'a Path,
}

fn load(path: &Path) -> Result<Experiment, Error> {
    Experiment::from_config(&ExperimentConfig::from_path(path)?)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn execute(cli: Cli) -> Result<Option<String>, Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            parallel,
            serial,
        } => {
            let mut exp = load(&config)?;
            if parallel || serial {
                exp.parallel = parallel;
            }
            let format = match format {
                Some(Format::Csv) => MetricsFormat::Csv,
                Some(Format::Jsonl) => MetricsFormat::Jsonl,
                None if out
                    .as_ref()
                    .and_then(|p| p.extension())
                    .is_some_and(|e| e == "jsonl") =>
                {
                    MetricsFormat::Jsonl
                }
                None => MetricsFormat::Csv,
            };
            let result = run_experiment(&exp)?;
            match out {
                Some(path) => {
                    write_metrics(&result.records, &path, format)?;
                    Ok(Some(to_json(&RunSummary {
                        rounds: result.records.len(),
                        final_x: &result.final_x,
                        metrics: &path,
                    })))
                }
                None => {
                    write_metrics_to(
                        std::io::stdout().lock(),
                        &result.records,
                        format,
                        Path::new("<stdout>"),
                    )?;
                    Ok(None)
                }
            }
        }
        Command::FixedPoint { config } => Ok(Some(to_json(&fixed_point_summary(&load(&config)?)?))),
        Command::Landscape {
            config,
            grid,
            out,
            trials,
        } => {
            let exp = load(&config)?;
            let points = landscape(&exp, &parse_grid(&grid, exp.x0.len())?, trials)?;
            write_landscape(&points, &out)?;
            Ok(None)
        }
        Command::Validate { config, what } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let exp = Experiment::from_config(&cfg)?;
            Ok(Some(match what {
                Analysis::H => to_json(&contraction_report(&exp, &cfg.analysis)?),
                Analysis::Q => to_json(&variance_report(&exp, &cfg.analysis)?),
                Analysis::Bound => to_json(&bound_report(
                    &exp,
                    cfg.analysis.trials,
                    cfg.analysis.slack,
                )?),
            }))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(output) => {
            if let Some(text) = output {
                println!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
