//! Command-line simulator for distributed widely-linear complex Kalman
//! filtering experiments.

use clap::{Parser, Subcommand};
use dackf::filters::FilterVariant;
use dackf::harness::{
    builtin_ar2_config, builtin_projectile_config, csv_string, emit_csv, list_scenarios,
    load_config, run_scenario, ConfigError, HarnessError, MseSeries, ScenarioConfig,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dackf",
    version,
    about = "Distributed widely-linear (augmented) complex Kalman filtering simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo scenario and write the results CSV.
    Run {
        /// Builtin scenario name (`ar2`, `projectile`) or a config file path.
        #[arg(long)]
        scenario: String,
        /// Number of Monte-Carlo trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path (defaults to the config's `out`, then results.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Filter variants to run (comma separated), e.g. dckf,dackf,drkf.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        /// Noncircularity sweep values (comma separated), e.g. 0,0.3,0.6,0.9.
        #[arg(long = "eta-sweep", value_delimiter = ',', allow_hyphen_values = true)]
        eta_sweep: Option<Vec<f64>>,
        /// Horizon in steps; the steady-state window defaults to the final
        /// quarter.
        #[arg(long)]
        horizon: Option<usize>,
        /// Also propagate the theoretical error covariance (adds
        /// `theory-dackf` rows to the CSV).
        #[arg(long)]
        theory: bool,
        /// Print the CSV to stdout instead of summarising.
        #[arg(long)]
        print_csv: bool,
    },
    /// List the builtin scenarios.
    ListScenarios,
    /// Validate a scenario config file.
    Validate {
        /// Config file path.
        config: PathBuf,
    },
}

fn resolve_scenario(name: &str) -> Result<ScenarioConfig, ConfigError> {
    match name {
        "ar2" => Ok(builtin_ar2_config()),
        "projectile" => Ok(builtin_projectile_config()),
        path => load_config(Path::new(path)),
    }
}

fn summarize(series: &MseSeries) {
    println!(
        "scenario `{}`: {} trials, horizon {}, steady window {}, seed {}",
        series.scenario, series.trials, series.horizon, series.steady_window, series.seed
    );
    for point in &series.points {
        println!("eta = {:.3}", point.eta);
        for variant in &point.variants {
            println!(
                "  {:<13} steady-state MSE {:>12.6} (se {:.2e})",
                variant.variant.to_string(),
                variant.network_steady_mse,
                variant.network_steady_se
            );
        }
        if let Some(report) = &point.report {
            println!(
                "  {:<13} network avg theory {:>10.6}, empirical {:>10.6}, worst-node bound {:.6}",
                "theory-dackf",
                report.network_average_theoretical,
                report.network_average_empirical,
                report.worst_node_bound
            );
        }
    }
}

fn run_command(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            scenario,
            trials,
            seed,
            out,
            variants,
            eta_sweep,
            horizon,
            theory,
            print_csv,
        } => {
            let mut config = resolve_scenario(&scenario)?;
            if let Some(trials) = trials {
                config.trials = trials;
            }
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(horizon) = horizon {
                config.horizon = horizon;
                config.steady_window = (horizon / 4).max(1);
            }
            if let Some(names) = variants {
                config.variants = names
                    .iter()
                    .map(|name| {
                        FilterVariant::parse(name).ok_or_else(|| {
                            ConfigError::Invalid(format!("unknown variant `{name}`"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            }
            if let Some(sweep) = eta_sweep {
                config.eta_sweep = sweep;
            }
            if theory {
                config.theory = true;
            }
            let output = out
                .or_else(|| config.output.clone())
                .unwrap_or_else(|| PathBuf::from("results.csv"));
            let series = run_scenario(&config)?;
            emit_csv(&series, &output)?;
            if print_csv {
                print!("{}", csv_string(&series));
            } else {
                summarize(&series);
            }
            println!("wrote {}", output.display());
            Ok(())
        }
        Command::ListScenarios => {
            for (name, description) in list_scenarios() {
                println!("{name:<12} {description}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let parsed = load_config(&config)?;
            let topology = parsed.validate()?;
            // building every sweep point catches infeasible noise settings
            for eta in parsed.sweep_points() {
                parsed.model_for_eta(&topology, eta)?;
            }
            println!(
                "OK: scenario `{}` ({} nodes, {} trials, horizon {})",
                parsed.name,
                topology.nodes(),
                parsed.trials,
                parsed.horizon
            );
            Ok(())
        }
    }
}

/// Errors that describe an impossible or inconsistent scenario are config
/// errors; breakdowns inside the numerics are numerical failures.
fn exit_code_for(err: &HarnessError) -> u8 {
    use dackf::filters::FilterError;
    match err {
        HarnessError::Config(_) | HarnessError::Stats(_) | HarnessError::Model(_) => EXIT_CONFIG,
        HarnessError::Filter(FilterError::CrossCorrelatedNoise)
        | HarnessError::Filter(FilterError::InvalidWeights(_))
        | HarnessError::Filter(FilterError::DimensionMismatch(_))
        | HarnessError::Filter(FilterError::Model(_)) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code_for(&err);
            if code == EXIT_CONFIG {
                eprintln!("config error: {err}");
            } else {
                eprintln!("error: {err}");
            }
            ExitCode::from(code)
        }
    }
}
