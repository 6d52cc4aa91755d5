//! `asep`: transition probabilities, identity checks and oracle comparisons.
//!
//! Exit status is 0 when the command succeeds and every check passes, 1 on
//! malformed input and 2 when a verification fails.

mod commands;
mod manifest;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use manifest::{parse_json, CommandKind, InstanceSpec, Options, ProblemFile, QuadSpec, Rate, ReferenceKind, RunManifest, TargetSpec};
use report::Outcome;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "asep", version, about = "Exact ASEP transition probabilities and identity checks")]
struct Cli {
    /// Cap on worker threads; output does not depend on it.
    #[arg(long, global = true, env = "ASEP_THREADS")]
    threads: Option<usize>,
    /// Directory for report.json and table.csv.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Formula probabilities for explicit targets or a whole window.
    Prob(ProbArgs),
    /// Formula at t = 0 against the point mass at the initial state.
    VerifyDelta(DeltaArgs),
    /// Braid relations of the coefficient operators in exact arithmetic.
    VerifyBraid(ExactArgs),
    /// Class sums of the t = 0 integrals grouped by inversions involving N.
    VerifyBClasses(BClassArgs),
    /// Second-class closed forms against the coefficient recursion.
    VerifySecondClass(ExactArgs),
    /// Truncated-generator distribution by uniformization.
    Oracle(OracleArgs),
    /// Monte Carlo end-state histogram.
    Simulate(SimArgs),
    /// Monte Carlo histogram against the formula or the oracle.
    Compare(CompareArgs),
    /// Coefficient table h for one exact spectral point.
    Coeffs(CoeffArgs),
    /// JSON schemas of all documents and the CSV column sets.
    Schema,
    /// Execute a JSON run manifest.
    Run {
        manifest: PathBuf,
    },
}

#[derive(Args, Default)]
struct InstanceArgs {
    /// Right hop rate, a decimal or a fraction such as 1/3.
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    t: Option<f64>,
    /// Number of particles when Y is not given.
    #[arg(long = "n")]
    n: Option<usize>,
    /// Number of species.
    #[arg(long = "m")]
    m: Option<u32>,
    /// Initial sites, comma separated.
    #[arg(long = "y", value_delimiter = ',', allow_hyphen_values = true)]
    y: Option<Vec<i64>>,
    /// Initial species labels, comma separated.
    #[arg(long, value_delimiter = ',')]
    nu: Option<Vec<u32>>,
}

impl InstanceArgs {
    fn spec(&self) -> InstanceSpec {
        InstanceSpec {
            p: self.p.clone().map(Rate::Text),
            t: self.t,
            n: self.n,
            m: self.m,
            y: self.y.clone(),
            nu: self.nu.clone(),
        }
    }
}

#[derive(Args, Default)]
struct QuadArgs {
    /// Contour radius; automatic when absent.
    #[arg(long)]
    radius: Option<f64>,
    /// Fixed nodes per variable; adaptive when absent.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long = "quad-tol")]
    quad_tol: Option<f64>,
    /// Automatic radius as a fraction of the pole bound.
    #[arg(long)]
    safety: Option<f64>,
}

impl QuadArgs {
    fn spec(&self) -> QuadSpec {
        QuadSpec { radius: self.radius, nodes: self.nodes, tol: self.quad_tol, safety: self.safety }
    }
}

fn parse_window(s: &str) -> Result<[i64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok([a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?]),
        _ => Err("expected LO,HI".into()),
    }
}

/// `X` or `X:pi`, both comma separated: `0,2:2,1`.
fn parse_target(s: &str) -> Result<TargetSpec, String> {
    let list = |t: &str| -> Result<Vec<i64>, String> { t.split(',').map(|v| v.trim().parse::<i64>().map_err(|e| format!("{v:?}: {e}"))).collect() };
    let (x, pi) = match s.split_once(':') {
        Some((x, pi)) => (x, Some(pi)),
        None => (s, None),
    };
    let pi = match pi {
        Some(p) => Some(list(p)?.into_iter().map(|v| u32::try_from(v).map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>()?),
        None => None,
    };
    Ok(TargetSpec { x: list(x)?, pi })
}

#[derive(Args)]
struct ProbArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    quad: QuadArgs,
    /// Target `X` or `X:pi`; repeatable. Without targets the whole window is evaluated.
    #[arg(long = "target", value_parser = parse_target, allow_hyphen_values = true)]
    targets: Vec<TargetSpec>,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<[i64; 2]>,
    /// Leakage tolerance for the automatic window.
    #[arg(long)]
    leak: Option<f64>,
    /// Also evaluate the generator oracle.
    #[arg(long)]
    oracle: bool,
    /// Problem file; replaces the instance and target flags.
    #[arg(long, conflicts_with_all = ["p", "t", "y", "nu", "targets", "window"])]
    problem: Option<PathBuf>,
}

#[derive(Args)]
struct DeltaArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<[i64; 2]>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long = "n")]
    n: Option<usize>,
    /// Exact rate, e.g. 1/3.
    #[arg(long)]
    p: Option<String>,
    /// Restrict to one initial species map.
    #[arg(long, value_delimiter = ',')]
    nu: Option<Vec<u32>>,
    /// Random rational spectral points.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ExactArgs {
    fn instance(&self) -> InstanceSpec {
        InstanceSpec { p: self.p.clone().map(Rate::Text), n: self.n, nu: self.nu.clone(), ..InstanceSpec::default() }
    }

    fn options(&self) -> Options {
        Options { points: self.points, seed: self.seed, ..Options::default() }
    }
}

#[derive(Args)]
struct BClassArgs {
    #[arg(long = "n")]
    n: Option<usize>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long = "y", value_delimiter = ',', allow_hyphen_values = true)]
    y: Option<Vec<i64>>,
    #[arg(long = "x", value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<i64>>,
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<[i64; 2]>,
    #[arg(long)]
    leak: Option<f64>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    quad: QuadArgs,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window: Option<[i64; 2]>,
    #[arg(long)]
    leak: Option<f64>,
    #[arg(long, value_enum)]
    reference: Option<ReferenceArg>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ReferenceArg {
    Formula,
    Oracle,
}

#[derive(Args)]
struct CoeffArgs {
    #[arg(long)]
    p: String,
    #[arg(long, value_delimiter = ',', required = true)]
    nu: Vec<u32>,
    /// Spectral point, comma separated fractions.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    xi: Vec<String>,
}

fn manifest_for(command: Command, out: Option<PathBuf>) -> Result<RunManifest, CliError> {
    let m = |command, instance, options| RunManifest { command, instance, options, out: out.clone() };
    Ok(match command {
        Command::Prob(a) => match a.problem {
            Some(path) => {
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let mut file: ProblemFile = parse_json(&text, &path.display().to_string())?;
                file.oracle |= a.oracle;
                let mut manifest = file.into_manifest(out.clone());
                manifest.options.leak = a.leak;
                if a.quad.spec() != QuadSpec::default() {
                    manifest.options.quad = a.quad.spec();
                }
                manifest
            }
            None => m(
                CommandKind::Prob,
                a.instance.spec(),
                Options {
                    quad: a.quad.spec(),
                    targets: (!a.targets.is_empty()).then_some(a.targets),
                    window: a.window,
                    leak: a.leak,
                    oracle: a.oracle,
                    ..Options::default()
                },
            ),
        },
        Command::VerifyDelta(a) => m(
            CommandKind::VerifyDelta,
            a.instance.spec(),
            Options { quad: a.quad.spec(), window: a.window, tolerance: a.tolerance, ..Options::default() },
        ),
        Command::VerifyBraid(a) => m(CommandKind::VerifyBraid, a.instance(), a.options()),
        Command::VerifySecondClass(a) => m(CommandKind::VerifySecondClass, a.instance(), a.options()),
        Command::VerifyBClasses(a) => m(
            CommandKind::VerifyBClasses,
            InstanceSpec { p: a.p.map(Rate::Text), n: a.n, y: a.y, ..InstanceSpec::default() },
            Options { quad: a.quad.spec(), x: a.x, tolerance: a.tolerance, ..Options::default() },
        ),
        Command::Oracle(a) => m(CommandKind::Oracle, a.instance.spec(), Options { window: a.window, leak: a.leak, ..Options::default() }),
        Command::Simulate(a) => m(CommandKind::Simulate, a.instance.spec(), Options { trials: a.trials, seed: a.seed, ..Options::default() }),
        Command::Compare(a) => m(
            CommandKind::Compare,
            a.instance.spec(),
            Options {
                quad: a.quad.spec(),
                trials: a.trials,
                seed: a.seed,
                window: a.window,
                leak: a.leak,
                reference: a.reference.map(|r| match r {
                    ReferenceArg::Formula => ReferenceKind::Formula,
                    ReferenceArg::Oracle => ReferenceKind::Oracle,
                }),
                ..Options::default()
            },
        ),
        Command::Coeffs(_) | Command::Schema | Command::Run { .. } => unreachable!("handled before manifest construction"),
    })
}

fn print_outcome(o: &Outcome) {
    for line in &o.summary {
        println!("{line}");
    }
    if let Some(c) = &o.report.counterexample {
        println!("first counterexample: {c}");
    }
    println!("{}", if o.report.passed { "PASS" } else { "FAIL" });
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("threads: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("threads: {e}")))?;
    }
    let (outcome, out) = match cli.command {
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&report::schema_document()).expect("schema serializes"));
            return Ok(true);
        }
        Command::Coeffs(a) => (commands::coefficients(&a.p, &a.nu, &a.xi)?, cli.out),
        Command::Run { manifest } => {
            let text = std::fs::read_to_string(&manifest).map_err(|e| CliError::Io(format!("{}: {e}", manifest.display())))?;
            let m: RunManifest = parse_json(&text, &manifest.display().to_string())?;
            let out = cli.out.or_else(|| m.out.clone());
            (commands::execute(&m)?, out)
        }
        command => {
            let m = manifest_for(command, cli.out.clone())?;
            (commands::execute(&m)?, cli.out)
        }
    };
    print_outcome(&outcome);
    if let Some(dir) = out {
        outcome.write(&dir)?;
    }
    Ok(outcome.report.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
