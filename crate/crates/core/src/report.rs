//! Run reports as JSON or text tables, and TSUE-relative comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::ResidenceStats;
use crate::config::SimConfig;
use crate::replay::{EngineStats, RunResult};

/// Counters shown in tables and comparisons, in display order.
pub const HEADLINE: [&str; 8] = [
    "read_write_ops",
    "read_write_bytes",
    "overwrite_ops",
    "overwrite_bytes",
    "random_ops",
    "network_bytes",
    "sync_mean_us",
    "update_throughput",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub verified: Option<bool>,
    pub counters: BTreeMap<String, f64>,
    pub extras: BTreeMap<String, u64>,
    pub residence: BTreeMap<String, ResidenceStats>,
    pub engine: EngineStats,
    pub recoveries: usize,
}

impl StrategyReport {
    pub fn from_run(r: &RunResult) -> Self {
        let agg = &r.metrics.aggregate;
        let d = &agg.device;
        let max_busy = r
            .metrics
            .nodes
            .iter()
            .map(|n| n.device.busy_us + n.network.busy_us)
            .fold(0.0f64, f64::max);
        let mut c = BTreeMap::new();
        let mut put = |k: &str, v: f64| {
            c.insert(k.to_string(), v);
        };
        put("read_write_ops", d.read_write_ops() as f64);
        put("read_write_bytes", d.read_write_bytes() as f64);
        put("read_ops", d.read_ops() as f64);
        put("write_ops", d.write_ops() as f64);
        put("seq_write_ops", d.seq_write_ops as f64);
        put("random_ops", d.random_ops() as f64);
        put("overwrite_ops", d.overwrite_ops() as f64);
        put("overwrite_bytes", d.overwrite_bytes() as f64);
        put("overwrite_data_ops", d.overwrite_data_ops as f64);
        put("overwrite_parity_ops", d.overwrite_parity_ops as f64);
        put("overwrite_reserved_ops", d.overwrite_reserved_ops as f64);
        put("device_busy_us", d.busy_us);
        put("network_messages", agg.network.messages as f64);
        put("network_bytes", agg.network.bytes as f64);
        put("sync_mean_us", r.metrics.sync.mean_us);
        put("sync_max_us", r.metrics.sync.max_us);
        put("max_node_busy_us", max_busy);
        // Updates per simulated second of the busiest node.
        let tput = if max_busy > 0.0 { r.engine.updates as f64 / (max_busy / 1e6) } else { 0.0 };
        put("update_throughput", tput);
        Self {
            strategy: r.strategy.clone(),
            verified: r.verified,
            counters: c,
            extras: r.extras.clone(),
            residence: r.metrics.residence.clone(),
            engine: r.engine.clone(),
            recoveries: r.recoveries.len(),
        }
    }

    /// A counter or strategy-specific extra by name.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.counters
            .get(name)
            .copied()
            .or_else(|| self.extras.get(name).map(|&v| v as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub trace: String,
    pub seed: u64,
    pub config: SimConfig,
    pub strategies: Vec<StrategyReport>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn table(&self) -> String {
        let mut out = format!("trace {}  seed {}\n", self.trace, self.seed);
        out.push_str(&table(&self.strategies, &HEADLINE, |s, k| s.value(k).map(fmt_num)));
        let verified: Vec<String> = self
            .strategies
            .iter()
            .map(|s| {
                let v = match s.verified {
                    Some(true) => "ok",
                    Some(false) => "FAILED",
                    None => "skipped",
                };
                format!("{}={v}", s.strategy)
            })
            .collect();
        let _ = writeln!(out, "verify: {}", verified.join(" "));
        let mut rows = vec![["log", "count", "mean_us", "p50_us", "p90_us", "p99_us", "max_us"].map(String::from)];
        for s in &self.strategies {
            for (layer, r) in &s.residence {
                rows.push([
                    format!("{}/{layer}", s.strategy),
                    r.count.to_string(),
                    format!("{:.0}", r.mean_us),
                    r.p50_us.to_string(),
                    r.p90_us.to_string(),
                    r.p99_us.to_string(),
                    r.max_us.to_string(),
                ]);
            }
        }
        if rows.len() > 1 {
            out.push_str("residence\n");
            out.push_str(&grid(rows.into_iter().map(Vec::from).collect()));
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

fn table<F>(rows: &[StrategyReport], cols: &[&str], cell: F) -> String
where
    F: Fn(&StrategyReport, &str) -> Option<String>,
{
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("strategy".to_string())
        .chain(cols.iter().map(|c| c.to_string()))
        .collect()];
    for r in rows {
        let mut line = vec![r.strategy.clone()];
        line.extend(cols.iter().map(|c| cell(r, c).unwrap_or_else(|| "n/a".into())));
        grid.push(line);
    }
    self::grid(grid)
}

fn grid(grid: Vec<Vec<String>>) -> String {
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|i| grid.iter().map(|l| l[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in grid {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Ratios of each strategy's counters to a baseline strategy's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub metrics: Vec<String>,
    /// `None` where either side lacks the counter or the baseline's is zero.
    pub ratios: BTreeMap<String, BTreeMap<String, Option<f64>>>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("no {0} run among the reports")]
    NoBaseline(String),
    #[error("reports were produced from different inputs ({0})")]
    Mismatched(&'static str),
}

/// Every counter name present in any report.
pub fn all_counters(reports: &[Report]) -> Vec<String> {
    let mut names: Vec<String> = reports
        .iter()
        .flat_map(|r| &r.strategies)
        .flat_map(|s| s.counters.keys().chain(s.extras.keys()).cloned())
        .collect();
    names.sort();
    names.dedup();
    names
}

pub fn compare(reports: &[Report], metrics: &[&str], baseline: &str) -> Result<Comparison, CompareError> {
    if let Some(first) = reports.first() {
        for r in &reports[1..] {
            if r.trace != first.trace {
                return Err(CompareError::Mismatched("trace"));
            }
            if r.seed != first.seed {
                return Err(CompareError::Mismatched("seed"));
            }
            if r.config != first.config {
                return Err(CompareError::Mismatched("config"));
            }
        }
    }
    let all: Vec<&StrategyReport> = reports.iter().flat_map(|r| &r.strategies).collect();
    let base = all
        .iter()
        .find(|s| s.strategy == baseline)
        .ok_or_else(|| CompareError::NoBaseline(baseline.to_string()))?;
    let mut ratios = BTreeMap::new();
    for s in &all {
        let row = metrics
            .iter()
            .map(|m| {
                let r = match (s.value(m), base.value(m)) {
                    (Some(v), Some(b)) if b != 0.0 => Some(v / b),
                    _ => None,
                };
                (m.to_string(), r)
            })
            .collect();
        ratios.insert(s.strategy.clone(), row);
    }
    Ok(Comparison {
        baseline: baseline.to_string(),
        metrics: metrics.iter().map(|m| m.to_string()).collect(),
        ratios,
    })
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn table(&self) -> String {
        let rows: Vec<StrategyReport> = self
            .ratios
            .keys()
            .map(|name| StrategyReport {
                strategy: name.clone(),
                verified: None,
                counters: BTreeMap::new(),
                extras: BTreeMap::new(),
                residence: BTreeMap::new(),
                engine: EngineStats::default(),
                recoveries: 0,
            })
            .collect();
        let cols: Vec<&str> = self.metrics.iter().map(String::as_str).collect();
        let mut out = format!("ratio to {}\n", self.baseline);
        out.push_str(&table(&rows, &cols, |r, m| {
            self.ratios[&r.strategy][m].map(|v| format!("{v:.3}"))
        }));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(name: &str, vals: &[(&str, f64)]) -> StrategyReport {
        StrategyReport {
            strategy: name.into(),
            verified: Some(true),
            counters: vals.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            extras: BTreeMap::new(),
            residence: BTreeMap::new(),
            engine: EngineStats::default(),
            recoveries: 0,
        }
    }

    fn report(s: Vec<StrategyReport>) -> Report {
        Report {
            trace: "t".into(),
            seed: 1,
            config: SimConfig::small(),
            strategies: s,
        }
    }

    #[test]
    fn ratios_and_missing() {
        let a = report(vec![rep("tsue", &[("x", 2.0), ("z", 0.0)]), rep("fo", &[("x", 5.0), ("z", 1.0)])]);
        let b = report(vec![rep("pl", &[("y", 1.0)])]);
        let c = compare(&[a, b], &["x", "y", "z"], "tsue").unwrap();
        assert_eq!(c.ratios["fo"]["x"], Some(2.5));
        assert_eq!(c.ratios["tsue"]["x"], Some(1.0));
        assert_eq!(c.ratios["pl"]["x"], None);
        assert_eq!(c.ratios["fo"]["z"], None);
        let t = c.table();
        assert!(t.contains("2.500") && t.contains("n/a"), "{t}");
        assert_eq!(
            compare(&[report(vec![rep("fo", &[])])], &["x"], "tsue"),
            Err(CompareError::NoBaseline("tsue".into()))
        );
        let mut other = report(vec![rep("tsue", &[])]);
        other.seed = 2;
        assert_eq!(
            compare(&[report(vec![]), other], &["x"], "tsue"),
            Err(CompareError::Mismatched("seed"))
        );
    }

    #[test]
    fn json_round_trip() {
        let r = report(vec![rep("tsue", &[("read_write_ops", 10.0)])]);
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
        assert!(r.table().contains("verify: tsue=ok"));
    }
}
