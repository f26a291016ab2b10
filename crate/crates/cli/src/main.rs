use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use pisim_cli::config::{section_of, ExperimentConfig, RawConfig, SystemConfig};
use pisim_cli::output::{write_json, write_series, write_table};
use pisim_cli::run::run_experiment;
use pisim_cli::sweep::{parse_feedback, run_sweep, Axis};
use pisim_cli::CliError;

const UNITS: &str = "\
Units: hbar = 1. Two-qubit times (dt, t_final, tau_p, tau_i, windows) are in
units of 1/k. Oscillator times are absolute; any oscillator duration may also
be written in periods, e.g. tau_p=0.25T or dt=T/500, with T = 2*pi/omega. The
resolved period is echoed by `pisim config`.

Every config key can be overridden on the command line as --key=value or
--section.key=value, for example --eta=0.6 or --ensemble.n_traj=500.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error. Failures print a one-line JSON object to stderr.";

#[derive(Parser)]
#[command(name = "pisim", version, about = "Trajectory simulator for P, I and PI quantum feedback", after_help = UNITS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble, writing the time-series CSV and the summary JSON.
    #[command(after_help = UNITS)]
    Run {
        /// INI config file with [system], [controller], [ensemble], [output].
        config: Option<PathBuf>,
    },
    /// Repeat a run over values of one parameter.
    #[command(after_help = UNITS)]
    Sweep {
        config: Option<PathBuf>,
        /// theta, tau_i, tau_p, eta or epsilon.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; durations accept the T suffix.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated subset of P, I, PI; defaults to the configured feedback.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Print the fully resolved configuration.
    #[command(after_help = UNITS)]
    Config { config: Option<PathBuf> },
}

/// Splits `--key=value` overrides for config keys from the arguments clap
/// should see.
fn split_overrides(args: impl Iterator<Item = String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let key = arg
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .map(|(k, _)| k);
        let is_config_key = key.is_some_and(|k| {
            let bare = k.rsplit_once('.').map_or(k, |(_, b)| b);
            section_of(bare).is_some()
        });
        if is_config_key {
            overrides.push(arg);
        } else {
            rest.push(arg);
        }
    }
    (rest, overrides)
}

fn load(path: Option<&PathBuf>, overrides: &[String]) -> Result<RawConfig, CliError> {
    let mut raw = match path {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    for o in overrides {
        raw.apply_override(o)?;
    }
    Ok(raw)
}

fn execute(cli: Cli, overrides: &[String]) -> Result<(), CliError> {
    match cli.command {
        Command::Config { config } => {
            let cfg = ExperimentConfig::resolve(&load(config.as_ref(), overrides)?)?;
            if let SystemConfig::Oscillator(o) = &cfg.system {
                println!("# period T = {}", o.period);
            }
            print!("{}", cfg.to_ini());
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::resolve(&load(config.as_ref(), overrides)?)?;
            let result = run_experiment(&cfg)?;
            write_series(&cfg.output.csv, result.header, &result.rows)?;
            write_json(&cfg.output.summary, &result.summary)?;
            info!(
                "wrote {} and {}",
                cfg.output.csv.display(),
                cfg.output.summary.display()
            );
            let means: Vec<String> = result
                .summary
                .steady_means
                .iter()
                .map(|(k, v)| format!("{k} = {v:.6}"))
                .collect();
            println!(
                "steady window {:?}: {}",
                result.summary.steady_window,
                means.join(", ")
            );
        }
        Command::Sweep {
            config,
            axis,
            values,
            strategies,
        } => {
            let raw = load(config.as_ref(), overrides)?;
            let axis = Axis::parse(&axis)?;
            let strategies = strategies
                .map(|s| {
                    s.iter()
                        .map(|x| parse_feedback(x))
                        .collect::<Result<Vec<_>, _>>()
                })
                .transpose()?;
            let base = ExperimentConfig::resolve(&raw)?;
            let result = run_sweep(&raw, axis, &values, strategies.as_deref())?;
            let (header, rows) = result.table();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_table(&base.output.csv, &header, &rows)?;
            write_json(&base.output.summary, &result)?;
            println!("{}", header.join(","));
            for row in &rows {
                println!("{}", row.join(","));
            }
            if let Some(opt) = &result.theta_opt {
                for (strategy, theta) in opt {
                    println!("theta_opt[{strategy}] = {theta}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args());
    let cli = Cli::parse_from(args);
    match execute(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
