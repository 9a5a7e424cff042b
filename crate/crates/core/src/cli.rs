//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for numerical
//! failures. Every failure prints a single `error: ...` line on stderr.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::data::read_dataset;
use crate::error::Error;
use crate::inference::{bootstrap_band, BootstrapSettings};
use crate::link::LinkSpec;
use crate::nested::{fit, FitOptions};
use crate::simlab::{mc_replicate, power_csv, power_curve, simulate_dataset, McOptions, Scenario, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "transfit", version, about = "Interval-censored linear transformation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a dataset CSV and write the fit as JSON plus a summary table.
    Fit(FitArgs),
    /// Write a simulated dataset CSV.
    Simulate(SimArgs),
    /// Monte Carlo table of bias, SD, ASE, MSE and coverage.
    McTable(McArgs),
    /// Pointwise bootstrap band for the baseline transformation.
    BootstrapBand(BandArgs),
    /// Rejection rates of the Wald test of beta1 = 0 over a grid.
    Power(PowerArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "ph")]
    link: String,
    #[arg(long)]
    knots: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// JSON output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary CSV path; printed to stderr when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimFlags {
    #[arg(long, default_value = "C1")]
    config: String,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// True coefficients as `b1,b2`.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[command(flatten)]
    sim: SimFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct McFlags {
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long)]
    knots: Option<usize>,
    /// Fitting link; the generating link when omitted.
    #[arg(long)]
    link: Option<String>,
    #[arg(long, env = "TRANSFIT_THREADS", default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Args)]
struct McArgs {
    #[command(flatten)]
    sim: SimFlags,
    #[command(flatten)]
    mc: McFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BandArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "ph")]
    link: String,
    /// Either `t1,t2,...` or `lo:hi:count`.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    knots: Option<usize>,
    #[arg(long, env = "TRANSFIT_THREADS", default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PowerArgs {
    #[command(flatten)]
    sim: SimFlags,
    #[command(flatten)]
    mc: McFlags,
    /// Values of the true beta1, as `b1,b2,...` or `lo:hi:count`.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE };
        Self { code, message: e.to_string() }
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let line: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(|l| l.trim().trim_start_matches("error: "))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("error: {}", line.join(" "));
            return EXIT_USAGE;
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::McTable(a) => run_mc(a),
        Command::BootstrapBand(a) => run_band(a),
        Command::Power(a) => run_power(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            f.code
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_link(s: &str) -> std::result::Result<LinkSpec, Failure> {
    s.parse::<LinkSpec>().map_err(Failure::from)
}

fn check_level(level: f64) -> CliResult {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Failure::usage(format!("--level must lie in (0, 1), got {level}")))
    }
}

fn check_threads(threads: usize) -> CliResult {
    if threads == 0 {
        Err(Failure::usage("--threads must be at least 1"))
    } else {
        Ok(())
    }
}

fn check_knots(knots: Option<usize>) -> CliResult {
    if knots == Some(0) {
        Err(Failure::usage("--knots must be at least 1"))
    } else {
        Ok(())
    }
}

/// `a,b,c` or `lo:hi:count` (inclusive, evenly spaced).
fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, Failure> {
    let bad = || Failure::usage(format!("invalid grid `{s}`"));
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        match count {
            0 => return Err(bad()),
            1 => vec![lo],
            _ => (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect(),
        }
    } else {
        s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

fn sim_config(f: &SimFlags) -> std::result::Result<SimConfig, Failure> {
    let scenario: Scenario = f.config.parse().map_err(Failure::from)?;
    let mut sc = SimConfig::new(scenario, f.alpha, f.n, f.seed);
    if let Some(b) = &f.beta {
        sc.beta_true = parse_grid(b)?;
    }
    sc.validate()?;
    Ok(sc)
}

fn mc_options(f: &McFlags) -> std::result::Result<McOptions, Failure> {
    if f.reps == 0 {
        return Err(Failure::usage("--reps must be at least 1"));
    }
    check_threads(f.threads)?;
    check_knots(f.knots)?;
    let fit_alpha = match &f.link {
        Some(l) => Some(parse_link(l)?.alpha()),
        None => None,
    };
    Ok(McOptions { reps: f.reps, knots: f.knots, fit_alpha, threads: f.threads, ..McOptions::default() })
}

fn run_fit(a: FitArgs) -> CliResult {
    let link = parse_link(&a.link)?;
    check_level(a.level)?;
    check_knots(a.knots)?;
    let ds = read_dataset(&a.data)?;
    let options = FitOptions { interior_knots: a.knots, ..FitOptions::default() };
    let res = match fit(&ds, link, &options) {
        Ok(res) => res,
        Err(Error::OuterNonConvergence { best, iterations }) => {
            emit(&a.out, &best.to_json())?;
            return Err(Error::OuterNonConvergence { best, iterations }.into());
        }
        Err(e) => return Err(e.into()),
    };
    emit(&a.out, &res.to_json())?;
    let summary = res.summary_csv(a.level);
    match &a.summary {
        Some(path) => emit(&Some(path.clone()), &summary)?,
        None => eprint!("{summary}"),
    }
    if !res.converged {
        return Err(Failure { code: EXIT_NUMERICAL, message: res.diagnostics.messages.join("; ") });
    }
    Ok(())
}

fn run_simulate(a: SimArgs) -> CliResult {
    let sc = sim_config(&a.sim)?;
    let ds = simulate_dataset(&sc)?;
    emit(&a.out, &ds.to_csv())
}

fn run_mc(a: McArgs) -> CliResult {
    let sc = sim_config(&a.sim)?;
    let options = mc_options(&a.mc)?;
    let summary = mc_replicate(&sc, &options)?;
    emit(&a.out, &summary.to_csv())?;
    if summary.flagged {
        eprintln!(
            "warning: {} of {} replicates failed",
            summary.failures, summary.replications
        );
    }
    Ok(())
}

fn run_band(a: BandArgs) -> CliResult {
    let link = parse_link(&a.link)?;
    check_level(a.level)?;
    check_threads(a.threads)?;
    check_knots(a.knots)?;
    if a.resamples < 2 {
        return Err(Failure::usage("--resamples must be at least 2"));
    }
    let grid = parse_grid(&a.grid)?;
    let ds = read_dataset(&a.data)?;
    let settings = BootstrapSettings { resamples: a.resamples, seed: a.seed, level: a.level, threads: a.threads };
    let options = FitOptions { interior_knots: a.knots, ..FitOptions::default() };
    let band = bootstrap_band(&ds, link, &grid, &settings, &options)?;
    emit(&a.out, &band.to_csv())
}

fn run_power(a: PowerArgs) -> CliResult {
    let sc = sim_config(&a.sim)?;
    let options = mc_options(&a.mc)?;
    let grid = parse_grid(&a.grid)?;
    let points = power_curve(&sc, &grid, &options)?;
    emit(&a.out, &power_csv(&sc, &points))
}
