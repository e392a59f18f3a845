//! `qtraj`: run, verify and refine trajectory-picture scenarios.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qtraj::diagnostics::DiagnosticReport;
use qtraj::runner::{self, RunOutcome, Scenario};
use qtraj::Error;

const CONFIG_ERROR: u8 = 3;
const NUMERICAL_ABORT: u8 = 2;

#[derive(Parser)]
#[command(name = "qtraj", version, about = "Quantum dynamics as a congruence of trajectories, checked against a spectral solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectories, wavefunctions, report and manifest.
    Run {
        /// Scenario file, or the id of a bundled scenario.
        scenario: String,
        /// Artifact directory (default: the scenario's output directory, else out/<id>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the scenario's diagnostics without writing artifacts.
    Verify { scenario: String },
    /// Convergence study against the closed-form solution.
    Converge {
        scenario: String,
        /// Refinement levels as dt:points pairs, e.g. 4e-3:201,2e-3:201,1e-3:201.
        #[arg(long, value_delimiter = ',', value_parser = parse_level, required = true)]
        levels: Vec<(f64, usize)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled scenarios.
    ListScenarios,
}

fn parse_level(s: &str) -> Result<(f64, usize), String> {
    let (dt, points) = s.split_once(':').ok_or_else(|| format!("level {s:?} is not dt:points"))?;
    let dt: f64 = dt.trim().parse().map_err(|e| format!("bad dt in {s:?}: {e}"))?;
    let points: usize = points.trim().parse().map_err(|e| format!("bad point count in {s:?}: {e}"))?;
    Ok((dt, points))
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("QTRAJ_THREADS") else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("QTRAJ_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn output_dir(s: &Scenario, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| s.outputs.directory.clone()).unwrap_or_else(|| Path::new("out").join(&s.id))
}

fn print_report(report: &DiagnosticReport) {
    for (name, m) in &report.metrics {
        let verdict = if m.pass { "PASS" } else { "FAIL" };
        let side = match m.bound {
            qtraj::diagnostics::Bound::Below => "<",
            qtraj::diagnostics::Bound::Above => ">",
        };
        println!("{verdict} {name:<24} {:<12.4e} {side} {:.1e}  (t = {})", m.value, m.threshold, m.time);
    }
    for (name, v) in &report.info {
        println!("     {name:<24} {v:.4e}");
    }
}

fn finish(outcome: &RunOutcome) -> ExitCode {
    print_report(&outcome.report);
    if let Some(e) = &outcome.abort {
        eprintln!("aborted: {e}");
    }
    println!("status: {:?} ({:.2} s)", outcome.status, outcome.wall_time);
    ExitCode::from(outcome.status.exit_code() as u8)
}

fn failure(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_numerical() {
        ExitCode::from(NUMERICAL_ABORT)
    } else {
        ExitCode::from(CONFIG_ERROR)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CONFIG_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(CONFIG_ERROR);
    }
    match cli.command {
        Command::ListScenarios => {
            for (id, text) in runner::BUNDLED {
                match runner::parse_scenario(text) {
                    Ok(s) => println!("{id:<24} particles={} dim={} t_final={}", s.system.particles, s.system.dim, s.t_final),
                    Err(e) => println!("{id:<24} invalid: {e}"),
                }
            }
            ExitCode::SUCCESS
        }
        Command::Run { scenario, out } => {
            let s = match runner::load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return failure(e),
            };
            let dir = output_dir(&s, out);
            match runner::run_scenario(&s, Some(&dir)) {
                Ok(outcome) => {
                    println!("artifacts in {}", dir.display());
                    finish(&outcome)
                }
                Err(e) => failure(e),
            }
        }
        Command::Verify { scenario } => match runner::load_scenario(&scenario).and_then(|s| runner::run_scenario(&s, None)) {
            Ok(outcome) => finish(&outcome),
            Err(e) => failure(e),
        },
        Command::Converge { scenario, levels, out } => {
            let s = match runner::load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return failure(e),
            };
            let table = match runner::convergence_study(&s, &levels) {
                Ok(t) => t,
                Err(e) => return failure(e),
            };
            let dir = output_dir(&s, out);
            let written = std::fs::create_dir_all(&dir)
                .map_err(Error::from)
                .and_then(|_| runner::write_convergence_csv(&table, &dir.join("convergence.csv")));
            if let Err(e) = written {
                return failure(e);
            }
            println!("{:>10} {:>7} {:>12} {:>12}", "dt", "points", "spacing", "max_error");
            for l in &table.levels {
                println!("{:>10} {:>7} {:>12.4e} {:>12.4e}", l.dt, l.points, l.spacing, l.max_error);
            }
            let show = |o: Option<f64>| o.map_or_else(|| "undetermined".to_string(), |v| format!("{v:.3}"));
            println!("temporal order: {}", show(table.temporal_order));
            println!("spatial order:  {}", show(table.spatial_order));
            println!("wrote {}", dir.join("convergence.csv").display());
            ExitCode::SUCCESS
        }
    }
}
