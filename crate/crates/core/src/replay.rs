//! Drives a strategy through a mapped trace against a simulated cluster,
//! keeping a plain byte image of every data block as the reference.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{diff_range, Cluster, ClusterError, MetricsSnapshot, NodeId, SparseBlock};
use crate::config::{ConfigError, SimConfig};
use crate::strategy::{
    make_strategy, recover, RecoveryError, RecoveryReport, Strategy, StrategyError, UpdateRequest,
};
use crate::trace::{map_to_updates, payload_for, AddressMap, MappedKind, MappedOp, TraceError, TraceRecord};
use crate::PAGE_SIZE;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("op {op}: {source}")]
    Strategy {
        op: u64,
        #[source]
        source: StrategyError,
    },
    #[error("recovery of node {node} at op {op}: {source}")]
    Recovery {
        op: u64,
        node: NodeId,
        #[source]
        source: RecoveryError,
    },
    #[error("op {op}: still refused after {retries} background ticks")]
    Stuck { op: u64, retries: u32 },
    #[error("verification failed: {0}")]
    Verify(Mismatch),
}

/// First byte range where the simulated state departs from the reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub what: &'static str,
    pub stripe: u64,
    pub role: usize,
    pub offset: u64,
    pub len: u64,
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: stripe {} block {} bytes [{}, {})",
            self.what,
            self.stripe,
            self.role,
            self.offset,
            self.offset + self.len
        )
    }
}

/// Fail `node` once `after_op` ops have been applied, then recover at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FailurePoint {
    pub after_op: u64,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOptions {
    pub seed: u64,
    pub verify: bool,
    pub failures: Vec<FailurePoint>,
    /// Background ticks allowed for one refused update before giving up.
    pub max_retries: u32,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            verify: false,
            failures: Vec::new(),
            max_retries: 10_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub initial_writes: u64,
    pub updates: u64,
    pub reads: u64,
    pub update_bytes: u64,
    pub backpressure_retries: u64,
    pub ticks: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub strategy: String,
    pub metrics: MetricsSnapshot,
    pub extras: BTreeMap<String, u64>,
    pub engine: EngineStats,
    pub recoveries: Vec<RecoveryReport>,
    /// `None` when verification was not requested.
    pub verified: Option<bool>,
}

pub struct Engine {
    cluster: Cluster,
    strategy: Box<dyn Strategy>,
    shadow: Option<HashMap<(u64, usize), SparseBlock>>,
    opts: ReplayOptions,
    tick_us: u64,
    next_tick: u64,
    applied: u64,
    stats: EngineStats,
    recoveries: Vec<RecoveryReport>,
}

impl Engine {
    pub fn new(cfg: &SimConfig, strategy: &str, opts: ReplayOptions) -> Result<Self, ReplayError> {
        let s = make_strategy(strategy, cfg, opts.seed).map_err(|source| ReplayError::Strategy { op: 0, source })?;
        Self::with_strategy(cfg, s, opts)
    }

    pub fn with_strategy(cfg: &SimConfig, strategy: Box<dyn Strategy>, opts: ReplayOptions) -> Result<Self, ReplayError> {
        cfg.validate()?;
        let cluster = Cluster::new(cfg)?;
        let mut failures = opts.failures.clone();
        failures.sort_by_key(|f| f.after_op);
        Ok(Self {
            cluster,
            strategy,
            shadow: opts.verify.then(HashMap::new),
            opts: ReplayOptions { failures, ..opts },
            tick_us: cfg.tick_us.max(1),
            next_tick: cfg.tick_us.max(1),
            applied: 0,
            stats: EngineStats::default(),
            recoveries: Vec::new(),
        })
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn strategy(&self) -> &dyn Strategy {
        self.strategy.as_ref()
    }

    fn tick(&mut self) -> Result<bool, ReplayError> {
        self.stats.ticks += 1;
        let op = self.applied;
        let r = self
            .strategy
            .background_tick(&mut self.cluster)
            .map_err(|source| ReplayError::Strategy { op, source })?;
        Ok(r.is_idle())
    }

    /// Runs every background tick due at or before `time`.
    pub fn advance_to(&mut self, time: u64) -> Result<(), ReplayError> {
        while self.next_tick <= time {
            self.cluster.set_now(self.next_tick);
            let idle = self.tick()?;
            self.next_tick += self.tick_us;
            if idle && self.next_tick <= time {
                // Nothing is pending until the next op arrives.
                self.next_tick += (time - self.next_tick) / self.tick_us * self.tick_us;
            }
        }
        self.cluster.set_now(time);
        Ok(())
    }

    pub fn apply(&mut self, op: &MappedOp) -> Result<(), ReplayError> {
        self.advance_to(op.time)?;
        match op.kind {
            MappedKind::Initial => {
                let data = payload_for(self.opts.seed, op.index, op.len);
                self.cluster.initial_write(op.stripe, op.block, op.offset, &data);
                self.shadow_write(op, &data);
                self.stats.initial_writes += 1;
            }
            MappedKind::Update => {
                let req = UpdateRequest {
                    stripe: op.stripe,
                    block: op.block,
                    offset: op.offset,
                    payload: payload_for(self.opts.seed, op.index, op.len),
                    time: op.time,
                };
                let mut retries = 0u32;
                loop {
                    self.cluster.begin_sync();
                    match self.strategy.handle_update(&mut self.cluster, &req) {
                        Ok(()) => {
                            self.cluster.end_sync();
                            break;
                        }
                        Err(StrategyError::BackPressure) => {
                            self.cluster.abort_sync();
                            retries += 1;
                            self.stats.backpressure_retries += 1;
                            if retries > self.opts.max_retries {
                                return Err(ReplayError::Stuck { op: op.index, retries });
                            }
                            self.tick()?;
                        }
                        Err(source) => {
                            self.cluster.abort_sync();
                            return Err(ReplayError::Strategy { op: op.index, source });
                        }
                    }
                }
                self.shadow_write(op, &req.payload);
                self.stats.updates += 1;
                self.stats.update_bytes += op.len;
            }
            MappedKind::Read => {
                let got = self.strategy.read(&mut self.cluster, op.stripe, op.block, op.offset, op.len);
                self.stats.reads += 1;
                if let Some(want) = self.shadow_read(op.stripe, op.block, op.offset, op.len) {
                    if let Some((a, b)) = diff_range(&got, &want) {
                        return Err(ReplayError::Verify(Mismatch {
                            what: "read returned stale bytes",
                            stripe: op.stripe,
                            role: op.block,
                            offset: op.offset + a as u64,
                            len: (b - a) as u64,
                        }));
                    }
                }
            }
        }
        self.applied += 1;
        Ok(())
    }

    fn shadow_write(&mut self, op: &MappedOp, data: &[u8]) {
        if let Some(sh) = &mut self.shadow {
            sh.entry((op.stripe, op.block)).or_default().write(op.offset, data);
        }
    }

    fn shadow_read(&self, stripe: u64, block: usize, off: u64, len: u64) -> Option<Vec<u8>> {
        let sh = self.shadow.as_ref()?;
        let mut buf = vec![0u8; len as usize];
        if let Some(b) = sh.get(&(stripe, block)) {
            b.read(off, &mut buf);
        }
        Some(buf)
    }

    /// Fails `node` and runs recovery right away.
    pub fn fail_and_recover(&mut self, node: NodeId) -> Result<RecoveryReport, ReplayError> {
        self.fail_many_and_recover(&[node])
    }

    /// Fails all of `nodes` together, then recovers.
    pub fn fail_many_and_recover(&mut self, nodes: &[NodeId]) -> Result<RecoveryReport, ReplayError> {
        let op = self.applied;
        let node = nodes.first().copied().unwrap_or_default();
        let wrap = |source| ReplayError::Recovery { op, node, source };
        for &n in nodes {
            self.cluster.fail_node(n)?;
        }
        // Too many lost blocks on a stripe trumps any lost log.
        self.cluster
            .check_recoverable()
            .map_err(|e| wrap(RecoveryError::Cluster(e)))?;
        for &n in nodes {
            self.strategy
                .on_fail(&mut self.cluster, n)
                .map_err(|e| wrap(RecoveryError::Strategy(e)))?;
        }
        let report = recover(&mut self.cluster, self.strategy.as_mut()).map_err(wrap)?;
        if self.shadow.is_some() {
            self.check_data()?;
        }
        self.recoveries.push(report.clone());
        Ok(report)
    }

    /// Drains every log into the blocks.
    pub fn quiesce(&mut self) -> Result<(), ReplayError> {
        let op = self.applied;
        self.strategy
            .quiesce(&mut self.cluster)
            .map_err(|source| ReplayError::Strategy { op, source })
    }

    /// Compares every stored or expected data page with the reference.
    /// Only meaningful once the strategy has been quiesced.
    pub fn check_data(&self) -> Result<(), ReplayError> {
        let Some(sh) = &self.shadow else {
            return Ok(());
        };
        let k = self.cluster.ec().k;
        let mut keys: Vec<(u64, usize)> = sh.keys().copied().collect();
        for st in self.cluster.stripes() {
            keys.extend((0..k).map(|b| (st, b)));
        }
        keys.sort_unstable();
        keys.dedup();
        for (stripe, block) in keys {
            let mut pages: Vec<u64> = sh.get(&(stripe, block)).map(|b| b.page_ids().collect()).unwrap_or_default();
            if let Some(b) = self.cluster.block(stripe, block) {
                pages.extend(b.page_ids());
            }
            pages.sort_unstable();
            pages.dedup();
            for p in pages {
                let off = p * PAGE_SIZE;
                let got = self.cluster.peek(stripe, block, off, PAGE_SIZE);
                let want = self.shadow_read(stripe, block, off, PAGE_SIZE).expect("shadow present");
                if let Some((a, b)) = diff_range(&got, &want) {
                    return Err(ReplayError::Verify(Mismatch {
                        what: "data block differs from the reference",
                        stripe,
                        role: block,
                        offset: off + a as u64,
                        len: (b - a) as u64,
                    }));
                }
            }
        }
        Ok(())
    }

    pub fn check_parity(&self) -> Result<(), ReplayError> {
        for st in self.cluster.stripes() {
            self.cluster.check_stripe(st).map_err(|d| {
                ReplayError::Verify(Mismatch {
                    what: "parity does not match the data",
                    stripe: d.stripe,
                    role: d.role,
                    offset: d.offset,
                    len: d.len,
                })
            })?;
        }
        Ok(())
    }

    /// Applies `ops`, injecting the configured failures.
    pub fn run(&mut self, ops: &[MappedOp]) -> Result<(), ReplayError> {
        let failures = self.opts.failures.clone();
        let mut next = failures.iter().peekable();
        for op in ops {
            while let Some(f) = next.next_if(|f| f.after_op <= self.applied) {
                self.fail_and_recover(f.node)?;
            }
            self.apply(op)?;
        }
        for f in next {
            self.fail_and_recover(f.node)?;
        }
        Ok(())
    }

    /// Drains all logs, snapshots the metrics and, if requested, verifies
    /// data, parity and the read path against the reference.
    pub fn finish(mut self) -> Result<RunResult, ReplayError> {
        self.quiesce()?;
        let metrics = self.cluster.snapshot();
        let extras = self.strategy.extra_counters();
        let verified = if self.shadow.is_some() {
            self.check_data()?;
            self.check_parity()?;
            self.check_reads()?;
            Some(true)
        } else {
            None
        };
        Ok(RunResult {
            strategy: self.strategy.name().to_string(),
            metrics,
            extras,
            engine: self.stats,
            recoveries: self.recoveries,
            verified,
        })
    }

    fn check_reads(&mut self) -> Result<(), ReplayError> {
        let Some(sh) = &self.shadow else {
            return Ok(());
        };
        let mut pages: Vec<(u64, usize, u64)> = sh
            .iter()
            .flat_map(|(&(s, b), blk)| blk.page_ids().map(move |p| (s, b, p)))
            .collect();
        pages.sort_unstable();
        for (stripe, block, p) in pages {
            let op = MappedOp {
                kind: MappedKind::Read,
                stripe,
                block,
                offset: p * PAGE_SIZE,
                len: PAGE_SIZE,
                time: self.cluster.now(),
                index: 0,
            };
            self.apply(&op)?;
        }
        Ok(())
    }
}

/// Maps `records` with the configured volume layout and replays them.
pub fn replay_records(
    cfg: &SimConfig,
    strategy: &str,
    records: &[TraceRecord],
    opts: ReplayOptions,
) -> Result<RunResult, ReplayError> {
    let mut map = AddressMap::new(cfg.k, cfg.block_size, cfg.stripes_per_volume);
    let ops = map_to_updates(records, &mut map)?;
    replay_ops(cfg, strategy, &ops, opts)
}

pub fn replay_ops(cfg: &SimConfig, strategy: &str, ops: &[MappedOp], opts: ReplayOptions) -> Result<RunResult, ReplayError> {
    let mut e = Engine::new(cfg, strategy, opts)?;
    e.run(ops)?;
    e.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{FullOverwrite, TickReport, STRATEGY_NAMES};
    use crate::trace::{generate, SynthParams};

    fn small_trace(ops: u64, seed: u64) -> Vec<TraceRecord> {
        let p = SynthParams {
            read_ratio: 0.2,
            volumes: 2,
            volume_bytes: 1 << 20,
            interarrival_us: 200,
            ..SynthParams::profile("ten", ops, seed).unwrap()
        };
        generate(&p).unwrap()
    }

    fn verify_opts(failures: Vec<FailurePoint>) -> ReplayOptions {
        ReplayOptions {
            seed: 7,
            verify: true,
            failures,
            ..Default::default()
        }
    }

    #[test]
    fn every_strategy_verifies() {
        let cfg = SimConfig::small();
        let recs = small_trace(1500, 1);
        for name in STRATEGY_NAMES {
            let r = replay_records(&cfg, name, &recs, verify_opts(vec![])).unwrap();
            assert_eq!(r.verified, Some(true), "{name}");
            assert!(r.engine.updates > 500, "{name}");
            assert!(r.engine.reads > 200, "{name}");
        }
    }

    #[test]
    fn every_strategy_survives_failures() {
        let cfg = SimConfig::small();
        let recs = small_trace(1500, 2);
        let failures = vec![
            FailurePoint { after_op: 400, node: 1 },
            FailurePoint { after_op: 900, node: 5 },
            FailurePoint { after_op: 1300, node: 2 },
        ];
        for name in STRATEGY_NAMES {
            let r = replay_records(&cfg, name, &recs, verify_opts(failures.clone()))
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(r.recoveries.len(), 3, "{name}");
            assert!(r.recoveries.iter().any(|x| !x.rebuilt_data.is_empty()), "{name}");
        }
    }

    /// Drops the parity update of every fifth request.
    struct SkipsParity {
        inner: FullOverwrite,
        n: u64,
    }

    impl Strategy for SkipsParity {
        fn name(&self) -> &'static str {
            "skips-parity"
        }
        fn handle_update(&mut self, c: &mut Cluster, req: &UpdateRequest) -> Result<(), StrategyError> {
            self.n += 1;
            if self.n % 5 == 0 {
                c.install(req.stripe, req.block, req.offset, &req.payload);
                return Ok(());
            }
            self.inner.handle_update(c, req)
        }
        fn background_tick(&mut self, _c: &mut Cluster) -> Result<TickReport, StrategyError> {
            Ok(TickReport::default())
        }
        fn read(&mut self, c: &mut Cluster, stripe: u64, block: usize, off: u64, len: u64) -> Vec<u8> {
            self.inner.read(c, stripe, block, off, len)
        }
        fn quiesce(&mut self, _c: &mut Cluster) -> Result<(), StrategyError> {
            Ok(())
        }
        fn on_fail(&mut self, _c: &mut Cluster, _node: NodeId) -> Result<(), StrategyError> {
            Ok(())
        }
    }

    /// Acknowledges updates without applying them.
    struct LosesWrites;

    impl Strategy for LosesWrites {
        fn name(&self) -> &'static str {
            "loses-writes"
        }
        fn handle_update(&mut self, _c: &mut Cluster, _req: &UpdateRequest) -> Result<(), StrategyError> {
            Ok(())
        }
        fn background_tick(&mut self, _c: &mut Cluster) -> Result<TickReport, StrategyError> {
            Ok(TickReport::default())
        }
        fn read(&mut self, c: &mut Cluster, stripe: u64, block: usize, off: u64, len: u64) -> Vec<u8> {
            c.peek(stripe, block, off, len)
        }
        fn quiesce(&mut self, _c: &mut Cluster) -> Result<(), StrategyError> {
            Ok(())
        }
        fn on_fail(&mut self, _c: &mut Cluster, _node: NodeId) -> Result<(), StrategyError> {
            Ok(())
        }
    }

    fn run_with(s: Box<dyn Strategy>, recs: &[TraceRecord]) -> Result<RunResult, ReplayError> {
        let cfg = SimConfig::small();
        let mut map = AddressMap::new(cfg.k, cfg.block_size, cfg.stripes_per_volume);
        let ops = map_to_updates(recs, &mut map).unwrap();
        let mut e = Engine::with_strategy(&cfg, s, verify_opts(vec![])).unwrap();
        e.run(&ops)?;
        e.finish()
    }

    #[test]
    fn broken_parity_is_caught() {
        let recs = small_trace(600, 3);
        let s = Box::new(SkipsParity {
            inner: FullOverwrite::new(),
            n: 0,
        });
        match run_with(s, &recs) {
            Err(ReplayError::Verify(m)) => {
                assert_eq!(m.what, "parity does not match the data");
                assert!(m.role >= 4 && m.len > 0);
            }
            other => panic!("expected a parity mismatch, got {:?}", other.map(|r| r.verified)),
        }
    }

    #[test]
    fn lost_writes_are_caught() {
        let recs = small_trace(600, 4);
        match run_with(Box::new(LosesWrites), &recs) {
            Err(ReplayError::Verify(m)) => assert!(m.len > 0 && m.role < 4, "{m}"),
            other => panic!("expected a mismatch, got {:?}", other.map(|r| r.verified)),
        }
    }

    #[test]
    fn unverified_run_reports_none() {
        let cfg = SimConfig::small();
        let r = replay_records(&cfg, "fo", &small_trace(200, 5), ReplayOptions::default()).unwrap();
        assert_eq!(r.verified, None);
    }
}
