//! Speculative parity logging: the data node forwards new data to the
//! parity hosts, which log it next to the original bytes seen on first
//! touch. Parity is brought up to date from `newest ^ original` when a
//! host's log passes its threshold.

use std::collections::BTreeMap;

use super::{scale, Strategy, StrategyError, TickReport, UpdateRequest};
use crate::cluster::{Cluster, NodeId, OpClass, Target};
use crate::codec::gf;
use crate::config::SimConfig;
use crate::extent::{ExtentMap, MergeRule};

/// Per first-touch update of L bytes: 1 random read of the original, 1
/// data overwrite, 2m messages and 2m sequential log appends; recycling
/// adds m parity reads and overwrites per logged extent. Repeat updates of
/// logged bytes skip the read and the original forward.
#[derive(Debug)]
pub struct Parix {
    budget: u64,
    threshold: u64,
    hosts: Vec<HostLog>,
    original_forwards: u64,
}

#[derive(Debug, Default)]
struct HostLog {
    /// (stripe, data block, parity index) -> logged bytes.
    blocks: BTreeMap<(u64, usize, usize), BlockLog>,
    bytes: u64,
    pressure: bool,
}

#[derive(Debug)]
struct BlockLog {
    original: ExtentMap,
    newest: ExtentMap,
    times: Vec<u64>,
}

impl Parix {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            budget: cfg.parity_log_budget,
            threshold: (cfg.parity_log_budget as f64 * cfg.parity_log_threshold) as u64,
            hosts: (0..cfg.cluster_size).map(|_| HostLog::default()).collect(),
            original_forwards: 0,
        }
    }

    fn recycle(&mut self, c: &mut Cluster, node: NodeId) -> u64 {
        let log = std::mem::take(&mut self.hosts[node]);
        let mut n = 0;
        for ((stripe, block, j), bl) in log.blocks {
            for (off, newest) in bl.newest.iter() {
                let mut delta = bl.original.get(off, newest.len() as u64).expect("original covers every logged byte");
                gf::xor_into(&mut delta, newest);
                let pd = scale(c.mat(), j, block, &delta);
                c.parity_rmw(stripe, j, off, &pd);
                n += 1;
            }
            for t in bl.times {
                c.record_residence("parity_log", t);
            }
        }
        n
    }
}

impl Strategy for Parix {
    fn name(&self) -> &'static str {
        "parix"
    }

    fn handle_update(&mut self, c: &mut Cluster, req: &UpdateRequest) -> Result<(), StrategyError> {
        let (k, m) = (c.ec().k, c.ec().m);
        let len = req.payload.len() as u64;
        let key = |j| (req.stripe, req.block, j);
        let gaps: Vec<Vec<(u64, u64)>> = (0..m)
            .map(|j| {
                let host = &self.hosts[c.node_of(req.stripe, k + j)];
                match host.blocks.get(&key(j)) {
                    Some(bl) => bl.original.uncovered(req.offset, len),
                    None => vec![(req.offset, len)],
                }
            })
            .collect();
        for j in 0..m {
            let host = &mut self.hosts[c.node_of(req.stripe, k + j)];
            let extra: u64 = gaps[j].iter().map(|g| g.1).sum();
            if host.bytes + len + extra > self.budget {
                host.pressure = true;
                return Err(StrategyError::BackPressure);
            }
        }
        let src = c.node_of(req.stripe, req.block);
        let original = if gaps.iter().any(|g| !g.is_empty()) {
            Some(c.block_read(req.stripe, req.block, req.offset, len))
        } else {
            None
        };
        c.block_overwrite(req.stripe, req.block, req.offset, &req.payload, Target::Data);
        let now = c.now();
        for j in 0..m {
            let node = c.node_of(req.stripe, k + j);
            c.send(src, node, len);
            c.charge(node, OpClass::SeqWrite, len);
            let extra: u64 = gaps[j].iter().map(|g| g.1).sum();
            if extra > 0 {
                self.original_forwards += 1;
                c.send(src, node, extra);
                c.charge(node, OpClass::SeqWrite, extra);
            }
            let host = &mut self.hosts[node];
            host.bytes += len + extra;
            let bl = host.blocks.entry(key(j)).or_insert_with(|| BlockLog {
                original: ExtentMap::new(MergeRule::NewestWins, false),
                newest: ExtentMap::new(MergeRule::NewestWins, false),
                times: Vec::new(),
            });
            if let Some(orig) = &original {
                for &(g, glen) in &gaps[j] {
                    let at = (g - req.offset) as usize;
                    bl.original.insert(g, &orig[at..at + glen as usize]);
                }
            }
            bl.newest.insert(req.offset, &req.payload);
            bl.times.push(now);
        }
        Ok(())
    }

    fn background_tick(&mut self, c: &mut Cluster) -> Result<TickReport, StrategyError> {
        let mut rep = TickReport::default();
        for node in 0..self.hosts.len() {
            let h = &self.hosts[node];
            if h.bytes > self.threshold || (h.pressure && h.bytes > 0) {
                rep.units += 1;
                rep.entries += self.recycle(c, node);
            }
        }
        Ok(rep)
    }

    fn read(&mut self, c: &mut Cluster, stripe: u64, block: usize, offset: u64, len: u64) -> Vec<u8> {
        c.block_read(stripe, block, offset, len)
    }

    fn quiesce(&mut self, c: &mut Cluster) -> Result<(), StrategyError> {
        for node in 0..self.hosts.len() {
            self.recycle(c, node);
        }
        Ok(())
    }

    fn on_fail(&mut self, _c: &mut Cluster, node: NodeId) -> Result<(), StrategyError> {
        self.hosts[node] = HostLog::default();
        Ok(())
    }

    fn extra_counters(&self) -> BTreeMap<String, u64> {
        [("original_forwards".to_string(), self.original_forwards)].into()
    }
}
