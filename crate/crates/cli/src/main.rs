use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ecupdate::config::{Flags, SimConfig};
use ecupdate::replay::{replay_records, FailurePoint, ReplayError, ReplayOptions};
use ecupdate::report::{all_counters, compare, Report, StrategyReport};
use ecupdate::strategy::STRATEGY_NAMES;
use ecupdate::trace::{generate, read_trace, write_trace, SynthParams};

#[derive(Parser)]
#[command(name = "ecbench", version, about = "Replay block traces through simulated erasure-coded update strategies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay one trace under each listed strategy.
    Replay(ReplayArgs),
    /// Ratio table of counters relative to a baseline strategy.
    Compare(CompareArgs),
    /// Write a synthetic trace.
    GenTrace(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args)]
struct ReplayArgs {
    /// Simulator config in TOML. Defaults apply when absent.
    #[arg(long, env = "ECBENCH_CONFIG")]
    config: Option<PathBuf>,
    /// Comma-separated strategy names, or `all`.
    #[arg(long, value_delimiter = ',', required = true)]
    strategy: Vec<String>,
    /// Trace file, gzip when it ends in `.gz`.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    trace: Option<PathBuf>,
    /// Synthetic profile: ali, ten or msr.
    #[arg(long)]
    synth: Option<String>,
    /// Length of the synthetic trace.
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check every strategy against the re-encoding reference.
    #[arg(long, requires = "seed")]
    verify: bool,
    /// Enabled TSUE optimizations, e.g. `o1,o2`. Overrides the config.
    #[arg(long)]
    flags: Option<String>,
    /// Fail a node after an op count and recover it, as `OP:NODE`.
    #[arg(long = "fail", value_parser = parse_failure)]
    failures: Vec<FailurePoint>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "tsue")]
    baseline: String,
    /// Comma-separated counters. Defaults to every counter present.
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    profile: String,
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of reads aimed at written extents.
    #[arg(long)]
    read_ratio: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_failure(s: &str) -> Result<FailurePoint, String> {
    let (op, node) = s.split_once(':').ok_or("expected OP:NODE")?;
    Ok(FailurePoint {
        after_op: op.parse().map_err(|e| format!("bad op count {op:?}: {e}"))?,
        node: node.parse().map_err(|e| format!("bad node {node:?}: {e}"))?,
    })
}

/// Exit status 1 means a verification failure, 2 any other error.
enum Failure {
    Verify(String),
    Other(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Other(e.to_string())
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Other(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn replay(a: ReplayArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    if let Some(f) = &a.flags {
        cfg.flags = Flags::parse_list(f)?;
    }
    let mut names: Vec<String> = Vec::new();
    for s in &a.strategy {
        let s = s.trim().to_ascii_lowercase();
        if s == "all" {
            names.extend(STRATEGY_NAMES.iter().map(|n| n.to_string()));
        } else if STRATEGY_NAMES.contains(&s.as_str()) {
            names.push(s);
        } else {
            return Err(Failure::Other(format!("unknown strategy {s:?}")));
        }
    }
    let (label, records) = match (&a.trace, &a.synth) {
        (Some(p), _) => (p.display().to_string(), read_trace(p)?),
        (None, Some(profile)) => {
            let p = SynthParams::profile(profile, a.ops, a.seed)?;
            (format!("synth:{profile}:{}", a.ops), generate(&p)?)
        }
        (None, None) => unreachable!("clap requires a trace source"),
    };
    let mut report = Report {
        trace: label,
        seed: a.seed,
        config: cfg.clone(),
        strategies: Vec::new(),
    };
    for name in &names {
        let opts = ReplayOptions {
            seed: a.seed,
            verify: a.verify,
            failures: a.failures.clone(),
            ..Default::default()
        };
        match replay_records(&cfg, name, &records, opts) {
            Ok(r) => report.strategies.push(StrategyReport::from_run(&r)),
            Err(e @ ReplayError::Verify(_)) => return Err(Failure::Verify(format!("{name}: {e}"))),
            Err(e) => return Err(Failure::Other(format!("{name}: {e}"))),
        }
    }
    let text = match a.format {
        Format::Json => report.to_json() + "\n",
        Format::Table => report.table(),
    };
    emit(&text, a.out.as_deref())
}

fn compare_cmd(a: CompareArgs) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for p in &a.reports {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::Other(format!("cannot read {}: {e}", p.display())))?;
        reports.push(Report::from_json(&text).map_err(|e| Failure::Other(format!("{}: {e}", p.display())))?);
    }
    let metrics = if a.metrics.is_empty() { all_counters(&reports) } else { a.metrics.clone() };
    let names: Vec<&str> = metrics.iter().map(String::as_str).collect();
    let c = compare(&reports, &names, &a.baseline)?;
    let text = match a.format {
        Format::Json => c.to_json() + "\n",
        Format::Table => c.table(),
    };
    emit(&text, a.out.as_deref())
}

fn gen_trace(a: GenArgs) -> Result<(), Failure> {
    let mut p = SynthParams::profile(&a.profile, a.ops, a.seed)?;
    if let Some(r) = a.read_ratio {
        p.read_ratio = r;
    }
    let records = generate(&p)?;
    write_trace(&a.out, &records)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Replay(a) => replay(a),
        Command::Compare(a) => compare_cmd(a),
        Command::GenTrace(a) => gen_trace(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify(msg)) => {
            eprintln!("ecbench: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("ecbench: {msg}");
            ExitCode::from(2)
        }
    }
}
