//! Command-line driver: parses a suite configuration, runs the suite and
//! writes a JSON [`Report`]. Exit codes: 0 all checks pass, 1 a check
//! failed, 2 bad configuration or a library error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use cdtoolkit::report::Report;
use cdtoolkit::spaces::SpaceSpec;
use cdtoolkit::{CurvatureParams, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod suites;

/// Seed used when neither `--seed` nor `CDTOOLKIT_SEED` is given.
pub const DEFAULT_SEED: u64 = 20_240_607;
pub const SEED_ENV: &str = "CDTOOLKIT_SEED";

#[derive(Parser, Debug)]
#[command(name = "cdtoolkit", version, about = "Curvature-dimension verification suites")]
struct Cli {
    #[command(subcommand)]
    suite: SuiteCmd,
}

#[derive(Subcommand, Debug)]
enum SuiteCmd {
    /// Distortion coefficients: ODE residuals and the scaling identity.
    Coeffs {
        #[arg(long)]
        selftest: bool,
        #[command(flatten)]
        common: Common,
    },
    /// One-dimensional CD(K,N) checks on a model density or a density CSV.
    Cd1d {
        #[arg(long, value_enum)]
        model: Option<Model>,
        #[command(flatten)]
        common: Common,
    },
    /// Hopf-Lax duality, midpoint sets and temporal certificates.
    Hopflax {
        #[command(flatten)]
        common: Common,
    },
    /// Transport rays, needle conditionals and MCP.
    Rays {
        #[command(flatten)]
        common: Common,
    },
    /// Optimal transport and entropy convexity.
    W2 {
        #[command(flatten)]
        common: Common,
    },
    /// L*Y factorization on synthesized change-of-variables data.
    Ly {
        #[command(flatten)]
        common: Common,
    },
    /// End-to-end L*Y pipeline on a model segment.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Model {
    Sphere,
    Euclidean,
    Hyperbolic,
}

#[derive(Args, Debug)]
struct Common {
    /// Space spec (JSON `SpaceSpec`).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Measure or density CSV; repeat for suites that take several.
    #[arg(long)]
    measure: Vec<PathBuf>,
    #[arg(long = "K", allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long = "N")]
    n_dim: Option<f64>,
    /// Resolution (grid nodes or sample size).
    #[arg(long = "n")]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance override for the suite's checks.
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads for independent cases.
    #[arg(long)]
    jobs: Option<usize>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV data dump (density, rays or factorization).
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Resolved configuration handed to a suite and echoed into the report.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteConfig {
    pub suite: String,
    pub space: Option<SpaceSpec>,
    pub measures: Vec<PathBuf>,
    pub k: f64,
    pub n: f64,
    pub resolution: Option<usize>,
    pub seed: u64,
    pub tol: Option<f64>,
    pub model: Option<String>,
    pub selftest: bool,
    #[serde(skip)]
    pub csv: Option<PathBuf>,
    #[serde(skip)]
    pub space_path: Option<PathBuf>,
}

impl SuiteConfig {
    pub fn params(&self) -> Result<CurvatureParams<f64>, Error> {
        CurvatureParams::finite(self.k, self.n)
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn resolve(cmd: SuiteCmd) -> Result<(SuiteConfig, Option<usize>, Option<PathBuf>), Failure> {
    let (suite, model, selftest, c) = match cmd {
        SuiteCmd::Coeffs { selftest, common } => ("coeffs", None, selftest, common),
        SuiteCmd::Cd1d { model, common } => ("cd1d", model, false, common),
        SuiteCmd::Hopflax { common } => ("hopflax", None, false, common),
        SuiteCmd::Rays { common } => ("rays", None, false, common),
        SuiteCmd::W2 { common } => ("w2", None, false, common),
        SuiteCmd::Ly { common } => ("ly", None, false, common),
        SuiteCmd::Pipeline { common } => ("pipeline", None, false, common),
    };
    let seed = match c.seed {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| Failure::Config(format!("{SEED_ENV}={v} is not an integer seed")))?,
            Err(_) => DEFAULT_SEED,
        },
    };
    let space = match &c.space {
        Some(p) => {
            let f = File::open(p).map_err(|e| Failure::Config(format!("cannot open space spec {}: {e}", p.display())))?;
            let spec: SpaceSpec = serde_json::from_reader(BufReader::new(f)).map_err(|e| Failure::Config(format!("bad space spec {}: {e}", p.display())))?;
            Some(spec)
        }
        None => None,
    };
    if let Some(m) = c.measure.iter().find(|m| !m.exists()) {
        return Err(Failure::Config(format!("measure file {} does not exist", m.display())));
    }
    if c.jobs == Some(0) {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let default_k = if model == Some(Model::Hyperbolic) { -1.0 } else if model == Some(Model::Euclidean) { 0.0 } else { 1.0 };
    let cfg = SuiteConfig {
        suite: suite.to_string(),
        space,
        measures: c.measure,
        k: c.k.unwrap_or(default_k),
        n: c.n_dim.unwrap_or(2.0),
        resolution: c.resolution,
        seed,
        tol: c.tol,
        model: model.map(|m| format!("{m:?}").to_lowercase()),
        selftest,
        csv: c.csv,
        space_path: c.space,
    };
    cfg.params()?;
    Ok((cfg, c.jobs, c.out))
}

fn write_report(report: &Report, out: Option<&PathBuf>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Failure::Config(e.to_string()))?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Failure::Config(e.to_string()))
        }
    }
}

fn execute(argv: Vec<OsString>) -> Result<bool, Failure> {
    let cli = Cli::try_parse_from(argv).map_err(|e| Failure::Config(e.to_string()))?;
    let (cfg, jobs, out) = resolve(cli.suite)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let checks = pool.install(|| suites::run_suite(&cfg))?;
    let report = Report {
        suite: cfg.suite.clone(),
        config_echo: serde_json::to_value(&cfg).map_err(|e| Failure::Config(e.to_string()))?,
        checks,
    };
    write_report(&report, out.as_ref())?;
    Ok(report.passed())
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    // Help and version requests are not configuration errors.
    if let Err(e) = Cli::try_parse_from(argv.clone()) {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            let _ = e.print();
            return 0;
        }
    }
    match execute(argv) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(Failure::Config(msg)) => {
            eprintln!("cdtoolkit: {msg}");
            2
        }
    }
}
