//! Command-line runner: configuration, subcommands and output files.
//!
//! Flags and an optional JSON config file are merged into one object (the
//! file wins), which is then parsed strictly by [`parse_config`]. Outputs
//! are written atomically and, when written to a file, get a
//! `<out>.meta.json` sidecar with the resolved config, its SHA-256, the
//! seed and the program version.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::book::{simulate, write_csv};
use crate::coupling::{distributional_test, pathwise_battery, y_transition_test, Side, TestReport};
use crate::displacement::{DisplacementDist, DistSpec, ProbSpec};
use crate::phase::{classify, phase_sweep, survival_estimate, truncation_study, RegimeReport, DEFAULT_BUDGET};
use crate::rng::{mix64, RandomStream};
use crate::tree::OffspringLaw;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Run(_) => "run",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        json!({"error": self.kind(), "message": self.to_string()}).to_string()
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Classify,
    Simulate,
    CoupleTest,
    YChainTest,
    PhaseSweep,
    Survival,
    TruncationStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

/// Which coupling check `couple-test` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingCheck {
    /// Shared randomness, exact equality at every step.
    Pathwise,
    /// Book against tree, independent randomness.
    Distribution,
    /// Book against a tree with the shifted offspring law.
    Control,
    /// Book against book.
    SelfTest,
}

/// Config as written by a user; every key optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct RawConfig {
    command: Option<Command>,
    p: Option<ProbSpec>,
    p_grid: Option<Vec<ProbSpec>>,
    dist: Option<DistSpec>,
    horizon: Option<u64>,
    depth: Option<Vec<u64>>,
    replicas: Option<u64>,
    samples: Option<u64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<Format>,
    threads: Option<u64>,
    levels: Option<Vec<f64>>,
    budget: Option<u64>,
    clip: Option<f64>,
    check: Option<CouplingCheck>,
    events: Option<bool>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub command: Command,
    pub p_grid: Vec<ProbSpec>,
    pub dist: DistSpec,
    pub horizon: u64,
    pub depth: Vec<u64>,
    pub replicas: u64,
    pub samples: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: u64,
    pub levels: Vec<f64>,
    pub budget: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    pub check: CouplingCheck,
    pub events: bool,
}

impl RunConfig {
    pub fn dist(&self) -> DisplacementDist {
        self.dist.build().expect("validated when parsed")
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.p_grid
            .iter()
            .map(|p| p.resolve().expect("validated when parsed").value())
            .collect()
    }

    /// SHA-256 of the canonical JSON of the config, without the output
    /// path and thread count, which do not change the results.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("out");
            m.remove("threads");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Parses and validates a JSON config. Unknown keys are rejected, and
/// probabilities may be written as `"a/b"`, decimal strings or numbers.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(format!("{path}: {}", e.inner()))
    })?;
    resolve(raw)
}

fn positive(name: &str, v: Option<u64>, default: u64) -> Result<u64, CliError> {
    let v = v.unwrap_or(default);
    if v == 0 {
        return Err(config_err(format!("{name}: must be positive")));
    }
    Ok(v)
}

fn resolve(raw: RawConfig) -> Result<RunConfig, CliError> {
    use Command::*;
    let command = raw.command.ok_or_else(|| config_err("command: missing"))?;
    let seed = raw.seed.ok_or_else(|| config_err("seed: missing (seeds are mandatory)"))?;
    let dist_spec = raw.dist.ok_or_else(|| config_err("dist: missing"))?;
    let dist = dist_spec.build().map_err(|e| config_err(format!("dist: {e}")))?;

    let p_grid = match (raw.p, raw.p_grid) {
        (Some(_), Some(_)) => return Err(config_err("p: give either p or p-grid, not both")),
        (Some(p), None) => vec![p],
        (None, Some(g)) if !g.is_empty() => g,
        (None, Some(_)) => return Err(config_err("p-grid: empty")),
        (None, None) => return Err(config_err("p: missing")),
    };
    for (i, p) in p_grid.iter().enumerate() {
        let key = if p_grid.len() == 1 { "p".to_string() } else { format!("p-grid[{i}]") };
        let v = p
            .resolve()
            .map_err(|_| config_err(format!("{key}: p must lie in (0,1)")))?
            .value();
        let ok = v > 0.0 && (v < 1.0 || (v == 1.0 && command == Simulate));
        if !ok {
            return Err(config_err(format!("{key}: p must lie in (0,1)")));
        }
    }
    if p_grid.len() > 1 && !matches!(command, Classify | PhaseSweep) {
        return Err(config_err("p-grid: only classify and phase-sweep take a grid"));
    }

    let defaults = match command {
        Classify => (1, 1, 1),
        Simulate => (1_000, 1, 1),
        CoupleTest => (10_000, 100, 100_000),
        YChainTest => (1_000, 1, 100_000),
        PhaseSweep => (100_000, 50, 1),
        Survival | TruncationStudy => (1, 10_000, 1),
    };
    let horizon = positive("horizon", raw.horizon, defaults.0)?;
    let replicas = positive("replicas", raw.replicas, defaults.1)?;
    let samples = positive("samples", raw.samples, defaults.2)?;
    let threads = positive("threads", raw.threads, 1)?;
    let budget = positive("budget", raw.budget, DEFAULT_BUDGET)?;
    if matches!(command, PhaseSweep) && replicas < 2 {
        return Err(config_err("replicas: phase-sweep needs at least 2"));
    }

    let depth = raw.depth.unwrap_or_else(|| vec![64]);
    if depth.is_empty() {
        return Err(config_err("depth: empty"));
    }
    if command == TruncationStudy && depth.len() != 1 {
        return Err(config_err("depth: truncation-study takes a single depth"));
    }
    let levels = raw.levels.unwrap_or_default();
    if command == TruncationStudy {
        if levels.is_empty() {
            return Err(config_err("levels: missing"));
        }
        if levels.iter().any(|&k| !(k >= 0.0 && k.is_finite())) || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("levels: must be nonnegative and increasing"));
        }
    }
    if let Some(k) = raw.clip {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(config_err("clip: must be nonnegative"));
        }
    }
    let check = raw.check.unwrap_or(CouplingCheck::Pathwise);
    if command == YChainTest && !dist.is_discrete() {
        return Err(config_err("dist: y-chain-test needs a discrete law"));
    }
    let format = raw.format.unwrap_or(match command {
        Classify | CoupleTest | YChainTest => Format::Json,
        _ => Format::Csv,
    });

    Ok(RunConfig {
        command,
        p_grid,
        dist: dist.to_spec(),
        horizon,
        depth,
        replicas,
        samples,
        seed,
        out: raw.out,
        format,
        threads,
        levels,
        budget,
        clip: raw.clip,
        check,
        events: raw.events.unwrap_or(false),
    })
}

fn csv_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "inf".to_string(), |v| v.to_string())
}

fn reports_csv(reports: &[TestReport]) -> String {
    let mut s = String::from("test,n,m,statistic,threshold,pass\n");
    for r in reports {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.test, r.n, r.m, r.statistic, r.threshold, r.pass);
    }
    s
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn regime_csv(reports: &[RegimeReport]) -> String {
    let mut s = String::from("p,meanX,probPositive,a,threshold,regime\n");
    for r in reports {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.p, r.mean_x, r.prob_positive, r.a, r.threshold, r.regime);
    }
    s
}

/// Runs the study named in `cfg` and returns its primary output.
pub fn execute(cfg: &RunConfig) -> Result<String, CliError> {
    let dist = cfg.dist();
    let ps = cfg.probabilities();
    let p = ps[0];
    let run_err = |e: &dyn std::fmt::Display| CliError::Run(e.to_string());
    Ok(match cfg.command {
        Command::Classify => {
            let reports: Vec<RegimeReport> = ps.iter().map(|&p| classify(p, &dist)).collect();
            match cfg.format {
                Format::Json if reports.len() == 1 => to_json(&reports[0]),
                Format::Json => to_json(&reports),
                Format::Csv => regime_csv(&reports),
            }
        }
        Command::Simulate => {
            let traj = simulate(p, &dist, cfg.horizon as usize, &mut RandomStream::new(cfg.seed, 0), false);
            match cfg.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    write_csv(&traj, cfg.events, &mut buf)?;
                    String::from_utf8(buf).expect("ascii")
                }
                Format::Json => to_json(&json!({
                    "prices": traj.prices,
                    "masses": traj.masses,
                    "tau": traj.tau,
                })),
            }
        }
        Command::CoupleTest => {
            let report = match cfg.check {
                CouplingCheck::Pathwise => {
                    pathwise_battery(p, &dist, cfg.horizon as usize, cfg.replicas as usize, cfg.seed)
                }
                check => {
                    let side = match check {
                        CouplingCheck::Distribution => Side::Tree(OffspringLaw::Geometric),
                        CouplingCheck::Control => Side::Tree(OffspringLaw::ShiftedGeometric),
                        _ => Side::Book,
                    };
                    let r = distributional_test(
                        p,
                        &dist,
                        cfg.horizon as usize,
                        cfg.samples as usize,
                        cfg.seed,
                        mix64(cfg.seed),
                        side,
                        0.01,
                    )
                    .map_err(|e| run_err(&e))?;
                    return Ok(match cfg.format {
                        Format::Json => to_json(&r),
                        Format::Csv => reports_csv(&r.tests),
                    });
                }
            };
            match cfg.format {
                Format::Json => to_json(&report),
                Format::Csv => reports_csv(&[report]),
            }
        }
        Command::YChainTest => {
            let f = y_transition_test(p, &dist, cfg.samples, cfg.horizon as usize, cfg.seed).map_err(|e| run_err(&e))?;
            match cfg.format {
                Format::Json => to_json(&f),
                Format::Csv => reports_csv(&f.tests),
            }
        }
        Command::PhaseSweep => {
            let rows = phase_sweep(&ps, &dist, cfg.horizon as usize, cfg.replicas as usize, cfg.seed)
                .map_err(|e| run_err(&e))?;
            match cfg.format {
                Format::Json => to_json(&rows),
                Format::Csv => {
                    let mut s = String::from("p,meanX,probPositive,a,threshold,regime,slope,ci95,fractionPositive\n");
                    for r in &rows {
                        let (c, d) = (&r.report, &r.drift);
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},{},{},{}",
                            c.p, c.mean_x, c.prob_positive, c.a, c.threshold, c.regime, d.slope, d.ci95, d.fraction_positive
                        );
                    }
                    s
                }
            }
        }
        Command::Survival => {
            let depths: Vec<usize> = cfg.depth.iter().map(|&d| d as usize).collect();
            let rows = survival_estimate(p, &dist, &depths, cfg.replicas as usize, cfg.seed, cfg.budget, cfg.clip)
                .map_err(|e| run_err(&e))?;
            match cfg.format {
                Format::Json => to_json(&rows),
                Format::Csv => {
                    let mut s = String::from("p,K,d,q_d,ci95,budgetFraction\n");
                    for r in &rows {
                        let _ = writeln!(s, "{p},{},{},{},{},{}", csv_opt(cfg.clip), r.d, r.q_d, r.ci95, r.budget_fraction);
                    }
                    s
                }
            }
        }
        Command::TruncationStudy => {
            let rows = truncation_study(
                p,
                &dist,
                &cfg.levels,
                cfg.depth[0] as usize,
                cfg.replicas as usize,
                cfg.seed,
                cfg.budget,
            )
            .map_err(|e| run_err(&e))?;
            match cfg.format {
                Format::Json => to_json(&rows),
                Format::Csv => {
                    let mut s = String::from("K,a_K,threshold_K,d,q_d,ci95,budgetFraction\n");
                    for r in &rows {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},{}",
                            csv_opt(r.k),
                            r.a_k,
                            r.threshold_k,
                            r.d,
                            r.q_d,
                            r.ci95,
                            r.budget_fraction
                        );
                    }
                    s
                }
            }
        }
    })
}

/// Writes `data` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(data)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Runs `cfg` on a pool of `cfg.threads` workers and writes the output to
/// `cfg.out` (with a sidecar) or returns it for stdout.
pub fn run(cfg: &RunConfig) -> Result<Option<String>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads as usize)
        .build()
        .map_err(|e| CliError::Run(e.to_string()))?;
    let output = pool.install(|| execute(cfg))?;
    match &cfg.out {
        None => Ok(Some(output)),
        Some(path) => {
            write_atomic(path, output.as_bytes())?;
            let meta = json!({
                "config": cfg,
                "configHash": cfg.hash(),
                "seed": cfg.seed,
                "version": format!("lobtree {VERSION}"),
            });
            write_atomic(&sidecar_path(path), to_json(&meta).as_bytes())?;
            Ok(None)
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lobtree", version, about = "Limit order book chain and its branching random walk coupling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Regime of the price process.
    Classify(Flags),
    /// One trajectory of the book chain.
    Simulate(Flags),
    /// Book against tree, pathwise or in distribution.
    CoupleTest(Flags),
    /// Transition frequencies of the white-free tree chain.
    YChainTest(Flags),
    /// Classification and drift over a grid of p.
    PhaseSweep(Flags),
    /// Survival of the barrier-pruned tree to given depths.
    Survival(Flags),
    /// Survival and MGF infimum under truncated labels.
    TruncationStudy(Flags),
}

impl Sub {
    fn split(self) -> (Command, Flags) {
        match self {
            Sub::Classify(f) => (Command::Classify, f),
            Sub::Simulate(f) => (Command::Simulate, f),
            Sub::CoupleTest(f) => (Command::CoupleTest, f),
            Sub::YChainTest(f) => (Command::YChainTest, f),
            Sub::PhaseSweep(f) => (Command::PhaseSweep, f),
            Sub::Survival(f) => (Command::Survival, f),
            Sub::TruncationStudy(f) => (Command::TruncationStudy, f),
        }
    }
}

#[derive(Debug, Default, clap::Args)]
pub struct Flags {
    /// Coin bias, decimal or `a/b`.
    #[arg(long)]
    pub p: Option<String>,
    /// Comma-separated list of p values.
    #[arg(long = "p-grid")]
    pub p_grid: Option<String>,
    /// Displacement law as JSON.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Depth, or comma-separated depths for `survival`.
    #[arg(long)]
    pub depth: Option<String>,
    #[arg(long)]
    pub replicas: Option<u64>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub threads: Option<u64>,
    /// JSON config file; its keys override flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated truncation levels.
    #[arg(long)]
    pub levels: Option<String>,
    /// Node budget per replica for survival runs.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Clip edge labels at this level in survival runs.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long, value_enum)]
    pub check: Option<CouplingCheck>,
    /// Add an event column to `simulate` CSV output.
    #[arg(long)]
    pub events: bool,
}

fn list(key: &str, text: &str, number: bool) -> Result<Value, CliError> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            if number {
                serde_json::from_str::<Value>(t)
                    .ok()
                    .filter(Value::is_number)
                    .ok_or_else(|| config_err(format!("{key}: {t:?} is not a number")))
            } else {
                Ok(Value::String(t.to_string()))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Value::Array)
}

/// Merges flags and the config file into one JSON object.
pub fn merge(command: Command, flags: Flags) -> Result<Value, CliError> {
    let mut m = Map::new();
    m.insert("command".into(), serde_json::to_value(command).expect("command serializes"));
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    };
    put("p", flags.p.map(Value::String));
    put("p-grid", flags.p_grid.as_deref().map(|s| list("p-grid", s, false)).transpose()?);
    put(
        "dist",
        flags
            .dist
            .as_deref()
            .map(|s| serde_json::from_str::<Value>(s).map_err(|e| config_err(format!("dist: invalid JSON: {e}"))))
            .transpose()?,
    );
    put("horizon", flags.horizon.map(Value::from));
    put("depth", flags.depth.as_deref().map(|s| list("depth", s, true)).transpose()?);
    put("replicas", flags.replicas.map(Value::from));
    put("samples", flags.samples.map(Value::from));
    put("seed", flags.seed.map(Value::from));
    put("out", flags.out.map(|p| Value::String(p.to_string_lossy().into_owned())));
    put("format", flags.format.map(|f| serde_json::to_value(f).expect("format serializes")));
    put("threads", flags.threads.map(Value::from));
    put("levels", flags.levels.as_deref().map(|s| list("levels", s, true)).transpose()?);
    put("budget", flags.budget.map(Value::from));
    put("clip", flags.clip.map(Value::from));
    put("check", flags.check.map(|c| serde_json::to_value(c).expect("check serializes")));
    if flags.events {
        put("events", Some(Value::Bool(true)));
    }
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("config: {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| config_err(format!("config: {e}")))?;
        let Value::Object(file) = file else {
            return Err(config_err("config: not a JSON object"));
        };
        for (k, v) in file {
            m.insert(k, v);
        }
    }
    Ok(Value::Object(m))
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Errors go to stderr as one JSON line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Config(format!("args: {first}")).to_line());
            return 2;
        }
    };
    let (command, flags) = cli.command.split();
    let result = merge(command, flags)
        .and_then(|v| parse_config(&v.to_string()))
        .and_then(|cfg| run(&cfg));
    match result {
        Ok(Some(out)) => {
            print!("{out}");
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.exit_code()
        }
    }
}
