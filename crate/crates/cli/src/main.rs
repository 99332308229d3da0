//! Command-line front end: run one scenario file or a shipped suite, export
//! traces and metrics, and signal the outcome through the exit code.
//!
//! Exit codes: 0 when every run met its success criteria, 1 when at least
//! one run failed them, 2 on configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flexiscope_core::harness::{
    run_scenario, suites, trace, HarnessError, RunResult, Scenario, TraceFormat,
};

#[derive(Parser)]
#[command(
    name = "flexiscope",
    about = "Closed-loop visual-servoing simulator for a dual-segment flexible endoscope",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Override the scenario seed (suites use seed, seed+1, ...).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for per-run trace and metrics files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace export format.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Append the formatted QP problem of every failed solve to this file.
    #[arg(long)]
    dump_qp_failures: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario file.
    Run {
        /// Scenario description (TOML).
        scenario: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Execute a shipped suite.
    Suite {
        /// One of: static6, cair, all.
        name: String,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(all_succeeded) => {
            if all_succeeded {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Config(_) | HarnessError::Io(_) => 2,
        HarnessError::Run(_) => 1,
    }
}

fn dispatch(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run { scenario, opts } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(seed) = opts.seed {
                sc.seed = seed;
            }
            let format = parse_format(&opts.format)?;
            let res = run_scenario(&sc)?;
            report(&sc.name, &res, &opts, format)?;
            Ok(res.metrics.success)
        }
        Command::Suite { name, opts } => {
            let format = parse_format(&opts.format)?;
            let runs: Vec<(String, RunResult)> = match name.as_str() {
                "static6" => named(suites::run_static_suite(opts.seed.unwrap_or(1))?),
                "cair" => named(suites::run_cair_suite(opts.seed.unwrap_or(4))?),
                "all" => {
                    let mut all = named(suites::run_static_suite(opts.seed.unwrap_or(1))?);
                    all.extend(named(suites::run_cair_suite(opts.seed.unwrap_or(4))?));
                    for mk in [suites::scenario_dynamic, suites::scenario_biopsy] {
                        let mut sc = mk()?;
                        if let Some(seed) = opts.seed {
                            sc.seed = seed;
                        }
                        let res = run_scenario(&sc)?;
                        all.push((sc.name.clone(), res));
                    }
                    all
                }
                other => {
                    return Err(HarnessError::Config(format!(
                        "unknown suite {other:?} (expected static6, cair or all)"
                    )))
                }
            };
            let mut all_ok = true;
            for (name, res) in &runs {
                report(name, res, &opts, format)?;
                all_ok &= res.metrics.success;
            }
            println!(
                "{}/{} runs met their success criteria",
                runs.iter().filter(|(_, r)| r.metrics.success).count(),
                runs.len()
            );
            Ok(all_ok)
        }
    }
}

fn named(runs: Vec<RunResult>) -> Vec<(String, RunResult)> {
    runs.into_iter()
        .map(|r| (r.metrics.name.clone(), r))
        .collect()
}

fn parse_format(s: &str) -> Result<TraceFormat, HarnessError> {
    s.parse::<TraceFormat>().map_err(HarnessError::Config)
}

fn report(
    name: &str,
    res: &RunResult,
    opts: &CommonOpts,
    format: TraceFormat,
) -> Result<(), HarnessError> {
    println!(
        "{}",
        serde_json::to_string_pretty(&res.metrics)
            .map_err(|e| HarnessError::Io(e.to_string()))?
    );
    if let Some(dir) = &opts.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
        let ext = match format {
            TraceFormat::Csv => "csv",
            TraceFormat::Json => "json",
        };
        trace::export_trace(&res.trace, &dir.join(format!("{name}.{ext}")), format)?;
        let metrics_path = dir.join(format!("{name}.metrics.json"));
        let body = serde_json::to_string_pretty(&res.metrics)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(&metrics_path, body)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", metrics_path.display())))?;
    }
    if let Some(path) = &opts.dump_qp_failures {
        append_qp_failures(path, name, &res.qp_failures)?;
    }
    Ok(())
}

fn append_qp_failures(path: &Path, name: &str, failures: &[String]) -> Result<(), HarnessError> {
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    for f in failures {
        writeln!(file, "run {name}, {f}")
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
