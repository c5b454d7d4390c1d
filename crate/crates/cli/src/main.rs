use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geomk::pmf::PmfEngine;
use geomk::Mode;

mod commands;

/// Waiting time until the first run of k consecutive successes.
#[derive(Parser)]
#[command(name = "geomk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single pmf value f(n).
    Pmf(PmfArgs),
    /// f(0..=n_max) with the cumulative sum.
    Table(TableArgs),
    /// Factorial, raw and central moments.
    Moments(MomentsArgs),
    /// Roots of the auxiliary polynomial with certification.
    Roots(RootsArgs),
    /// Cross-validation sweep over a parameter grid.
    Verify(VerifyArgs),
    /// Monte Carlo sample with a goodness-of-fit report.
    Sample(SampleArgs),
    /// Timing and accuracy of every pmf engine.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Float,
    Exact,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Float => Mode::Float,
            ModeArg::Exact => Mode::Exact,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Args)]
struct Dist {
    /// Success probability, as a decimal (0.5) or a fraction (1/2).
    #[arg(long, allow_hyphen_values = true)]
    p: String,
    /// Run length.
    #[arg(long)]
    k: u32,
    #[arg(long, value_enum, default_value = "float")]
    mode: ModeArg,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_engine(s: &str) -> Result<PmfEngine, String> {
    s.parse::<PmfEngine>().map_err(|e| e.to_string())
}

#[derive(Args)]
struct PmfArgs {
    #[command(flatten)]
    dist: Dist,
    #[arg(long)]
    n: u64,
    #[arg(long, value_parser = parse_engine, default_value = "recurrence")]
    engine: PmfEngine,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    dist: Dist,
    #[arg(long)]
    n_max: u64,
    #[arg(long, value_parser = parse_engine, default_value = "recurrence")]
    engine: PmfEngine,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    dist: Dist,
    #[arg(long, default_value_t = 4)]
    r_max: u64,
    #[arg(long, value_parser = parse_engine, default_value = "recurrence")]
    engine: PmfEngine,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct RootsArgs {
    #[arg(long, allow_hyphen_values = true)]
    p: String,
    #[arg(long)]
    k: u32,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct VerifyArgs {
    /// Comma-separated probabilities.
    #[arg(long, value_delimiter = ',', default_value = "1/3,1/2,3/4")]
    p_grid: Vec<String>,
    #[arg(long, default_value_t = 6)]
    k_max: u32,
    #[arg(long, default_value_t = 200)]
    n_max: u64,
    #[arg(long, default_value_t = 8)]
    r_max: u64,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Skip the truncated-series check of the factorial moments.
    #[arg(long)]
    no_series: bool,
    /// Corrupt one engine's output (exercises the failure path).
    #[arg(long, value_parser = parse_engine, hide = true)]
    inject_fault: Option<PmfEngine>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, allow_hyphen_values = true)]
    p: String,
    #[arg(long)]
    k: u32,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = geomk::simulate::DEFAULT_MAX_STEPS)]
    max_steps: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, allow_hyphen_values = true)]
    p: String,
    #[arg(long)]
    k: u32,
    #[arg(long, default_value_t = 2000)]
    n_max: u64,
    /// Comma-separated engine names.
    #[arg(long, value_delimiter = ',', value_parser = parse_engine,
          default_value = "recurrence,rootsum,muselli,closedform")]
    engines: Vec<PmfEngine>,
    #[command(flatten)]
    output: Output,
}

/// A failed command: exit code 1 for a failed check or computation, 2 for
/// invalid input.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<geomk::Error> for Failure {
    fn from(e: geomk::Error) -> Self {
        use geomk::Error::*;
        match e {
            Domain { name, reason } => Failure::usage(format!("--{}: {reason}", name.replace('_', "-"))),
            Parse { .. } | ModeMismatch(_) => Failure::usage(e.to_string()),
            FloatOnly(engine) => Failure::usage(format!(
                "--engine: `{engine}` is only available with --mode float"
            )),
            NoConvergence { .. } | Consistency(_) => Failure::check(e.to_string()),
        }
    }
}

/// Something that renders in every output format.
pub trait Render {
    fn json(&self) -> serde_json::Value;
    fn csv(&self) -> String;
    fn text(&self) -> String;
}

/// A rendered result plus whether its checks passed.
pub struct Outcome {
    pub body: Box<dyn Render>,
    pub passed: bool,
}

fn emit(outcome: &Outcome, output: &Output) -> Result<(), Failure> {
    let mut body = match output.format {
        Format::Json => serde_json::to_string_pretty(&outcome.body.json())
            .map_err(|e| Failure::check(format!("json encoding failed: {e}")))?,
        Format::Csv => outcome.body.csv(),
        Format::Text => outcome.body.text(),
    };
    if !body.ends_with('\n') {
        body.push('\n');
    }
    match &output.out {
        Some(path) => fs::write(path, body)
            .map_err(|e| Failure::usage(format!("--out: cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| Failure::check(format!("cannot write to stdout: {e}"))),
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("GEOMK_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("GEOMK_THREADS: expected a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::check(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    configure_threads()?;
    let (outcome, output) = match cli.command {
        Command::Pmf(a) => (commands::pmf(&a)?, a.output),
        Command::Table(a) => (commands::table(&a)?, a.output),
        Command::Moments(a) => (commands::moments(&a)?, a.output),
        Command::Roots(a) => (commands::roots(&a)?, a.output),
        Command::Verify(a) => (commands::verify(&a)?, a.output),
        Command::Sample(a) => (commands::sample(&a)?, a.output),
        Command::Bench(a) => (commands::bench(&a)?, a.output),
    };
    emit(&outcome, &output)?;
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
