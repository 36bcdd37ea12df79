use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use lve_core::covariance::DEFAULT_SLICE_RATIO;
use lve_core::LveError;

mod commands;
mod output;

use commands::StartWord;

pub const THREADS_ENV: &str = "LVE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "lve", version, about = "Loop vertex expansion toolkit for the Wick-ordered quartic model on small lattices")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Ring length for series/lve/cleaning, side length for the lattice covariance
    #[arg(long, global = true)]
    sites: Option<usize>,
    #[arg(long, global = true, default_value_t = 1.0)]
    spacing: f64,
    #[arg(long, global = true, default_value_t = 1.0)]
    mass: f64,
    #[arg(long = "slice-ratio", global = true, default_value_t = DEFAULT_SLICE_RATIO)]
    slice_ratio: f64,
    #[arg(long, global = true)]
    jmax: Option<u32>,
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true, default_value_t = 4)]
    nmax: usize,
    #[arg(long, global = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    cap: Option<usize>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, default_value = "lve-out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Print the resolved configuration and exit
    #[arg(long = "dry-run", global = true)]
    dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
enum Command {
    /// Enumerate labeled trees on n vertices
    Trees {
        #[arg(long, default_value_t = 5)]
        n: usize,
    },
    /// Forest-formula identity on random pair polynomials and positivity of path-infimum matrices
    BkarCheck {
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Largest number of vertices
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long = "psd-draws", default_value_t = 1000)]
        psd_draws: usize,
    },
    /// Slice tadpoles of the continuum covariance and the lattice covariance generator
    Covariance,
    /// Exact log Z series from Wick contractions
    Series,
    /// Loop vertex expansion of log Z, with the derivation-convention comparison
    Lve,
    /// Exact cancellation of the renormalized planar sums and of the order-λ sector
    Cancel {
        #[arg(long, default_value_t = 4)]
        n: u32,
    },
    /// Multiscale cleaning ledger of a dual-cycle word
    Cleaning {
        #[arg(long, value_enum, default_value_t = StartWord::TwoResolvent)]
        start: StartWord,
        /// Resolvent-propagator pairs of the single-loop start word
        #[arg(long, default_value_t = 1)]
        loops: usize,
        /// Integrate every record numerically and compare with the start value
        #[arg(long)]
        evaluate: bool,
        #[arg(long, default_value_t = 0.05)]
        lambda: f64,
    },
    /// Cluster sums of exp(-c τ) over sets of squares around the origin
    Cluster {
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[arg(long, default_value_t = 5)]
        radius: i32,
        #[arg(long, default_value_t = 6)]
        size: usize,
        #[arg(long)]
        exhaustive: bool,
    },
    /// Competition between the stopping factor, j! and the tadpole growth
    Nelson {
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long = "j-from", default_value_t = 15)]
        j_from: u32,
        #[arg(long = "j-to", default_value_t = 60)]
        j_to: u32,
    },
    /// Taylor remainders, factorial-bound fit and truncated Borel transform on the one-site model
    Borel {
        #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.05, 0.1])]
        lambda: Vec<f64>,
        #[arg(long = "u-max", default_value_t = 0.1)]
        u_max: f64,
        #[arg(long = "gh-order", default_value_t = 120)]
        gh_order: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Trees { .. } => "trees",
            Command::BkarCheck { .. } => "bkar-check",
            Command::Covariance => "covariance",
            Command::Series => "series",
            Command::Lve => "lve",
            Command::Cancel { .. } => "cancel",
            Command::Cleaning { .. } => "cleaning",
            Command::Cluster { .. } => "cluster",
            Command::Nelson { .. } => "nelson",
            Command::Borel { .. } => "borel",
        }
    }
}

/// Fully resolved run configuration; everything a payload may depend on.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub sites: usize,
    pub spacing: f64,
    pub mass: f64,
    pub slice_ratio: f64,
    pub jmax: u32,
    pub order: usize,
    pub nmax: usize,
    pub a: f64,
    pub cap: usize,
    pub seed: u64,
    pub format: String,
    pub out: PathBuf,
    #[serde(skip)]
    pub threads: usize,
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn resolve(common: &Common, command: &Command) -> Result<RunConfig, UsageError> {
    let name = command.name();
    let (jmax, order, a, cap, sites) = match command {
        Command::Covariance => (30, 3, 1.0, 100_000, 4),
        Command::Nelson { lambda, .. } => (30, 3, 3.0 * lambda, 100_000, 2),
        Command::Trees { .. } => (2, 3, 1.0, 300_000, 2),
        Command::Cluster { .. } => (2, 3, 1.0, 10_000_000, 2),
        Command::Borel { .. } => (2, 3, 1.0, 100_000, 1),
        _ => (2, 3, 1.0, 100_000, 2),
    };
    let cfg = RunConfig {
        subcommand: name.to_string(),
        sites: common.sites.unwrap_or(sites),
        spacing: common.spacing,
        mass: common.mass,
        slice_ratio: common.slice_ratio,
        jmax: common.jmax.unwrap_or(jmax),
        order: common.order.unwrap_or(order),
        nmax: common.nmax,
        a: common.a.unwrap_or(a),
        cap: common.cap.unwrap_or(cap),
        seed: common.seed,
        format: match common.format {
            Format::Json => "json".into(),
            Format::Csv => "csv".into(),
        },
        out: common.out.clone(),
        threads: threads_from_env()?,
    };
    if cfg.sites == 0 || cfg.cap == 0 || cfg.nmax == 0 {
        return Err(UsageError("--sites, --cap and --nmax must be positive".into()));
    }
    if !(cfg.spacing > 0.0 && cfg.mass > 0.0 && cfg.slice_ratio > 1.0 && cfg.a > 0.0) {
        return Err(UsageError("--spacing, --mass and --a must be positive and --slice-ratio above 1".into()));
    }
    Ok(cfg)
}

fn threads_from_env() -> Result<usize, UsageError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| UsageError(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn run(cfg: &RunConfig, command: &Command) -> anyhow::Result<output::Outcome> {
    match command {
        Command::Trees { n } => commands::trees(cfg, *n),
        Command::BkarCheck { samples, n, psd_draws } => commands::bkar_check(cfg, *samples, *n, *psd_draws),
        Command::Covariance => commands::covariance(cfg),
        Command::Series => commands::series(cfg),
        Command::Lve => commands::lve(cfg),
        Command::Cancel { n } => commands::cancel(cfg, *n),
        Command::Cleaning { start, loops, evaluate, lambda } => commands::cleaning(cfg, *start, *loops, *evaluate, *lambda),
        Command::Cluster { c, radius, size, exhaustive } => commands::cluster(cfg, *c, *radius, *size, *exhaustive),
        Command::Nelson { lambda, j_from, j_to } => commands::nelson(cfg, *lambda, *j_from, *j_to),
        Command::Borel { lambda, u_max, gh_order } => commands::borel(cfg, lambda, *u_max, *gh_order),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    if err.downcast_ref::<UsageError>().is_some() {
        return true;
    }
    matches!(
        err.downcast_ref::<LveError>(),
        Some(LveError::Domain(_) | LveError::EnumerationLimit { .. } | LveError::CostCap(_) | LveError::InvalidAssignment(_))
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli.common, &cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let resolved = json!({ "config": cfg, "options": cli.command });
    if cli.common.dry_run {
        let text = serde_json::to_string_pretty(&resolved).expect("serializable");
        let _ = writeln!(std::io::stdout(), "{text}");
        return ExitCode::SUCCESS;
    }
    let started = Instant::now();
    let outcome = match run(&cfg, &cli.command) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(if is_usage(&e) { 2 } else { 1 });
        }
    };
    let wall = started.elapsed().as_secs_f64();
    let csv = cli.common.format == Format::Csv;
    let files = match output::write_outputs(&cfg.out, &cfg.subcommand, csv, &outcome) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let manifest = json!({
        "config": resolved["config"],
        "options": resolved["options"],
        "versions": { "lve-cli": env!("CARGO_PKG_VERSION"), "lve-core": lve_core::VERSION },
        "threads": cfg.threads,
        "wall_time_seconds": wall,
        "files": files.iter().map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        "check": outcome.check,
        "notes": outcome.notes,
    });
    if let Err(e) = output::write_manifest(&cfg.out, &manifest) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match &outcome.check {
        Some(c) if !c.passed => {
            eprintln!("check failed: {}", c.message);
            ExitCode::from(1)
        }
        Some(c) => {
            eprintln!("check passed: {}", c.message);
            ExitCode::SUCCESS
        }
        None => ExitCode::SUCCESS,
    }
}
