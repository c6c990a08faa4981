//! Parity logging: data is updated in place, parity deltas are appended to
//! a log on each parity host and applied once the log passes a threshold.

use super::{data_rmw, scale, Strategy, StrategyError, TickReport, UpdateRequest};
use crate::cluster::{Cluster, NodeId, OpClass};
use crate::codec::ParityDeltaRecord;
use crate::config::SimConfig;

/// Per update of L bytes: 1 + m random reads and 1 + m overwrites, m
/// sequential log appends and m messages. Each log entry is applied on its
/// own at recycle time.
#[derive(Debug)]
pub struct ParityLogging {
    budget: u64,
    threshold: u64,
    logs: Vec<NodeLog>,
}

#[derive(Debug, Default)]
struct NodeLog {
    entries: Vec<(ParityDeltaRecord, u64)>,
    bytes: u64,
    pressure: bool,
}

impl ParityLogging {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            budget: cfg.parity_log_budget,
            threshold: (cfg.parity_log_budget as f64 * cfg.parity_log_threshold) as u64,
            logs: (0..cfg.cluster_size).map(|_| NodeLog::default()).collect(),
        }
    }

    fn recycle(&mut self, c: &mut Cluster, node: NodeId) -> u64 {
        let log = std::mem::take(&mut self.logs[node]);
        let n = log.entries.len() as u64;
        for (pd, t) in log.entries {
            c.parity_rmw(pd.stripe_id, pd.parity_index, pd.offset, &pd.payload);
            c.record_residence("parity_log", t);
        }
        n
    }
}

impl Strategy for ParityLogging {
    fn name(&self) -> &'static str {
        "pl"
    }

    fn handle_update(&mut self, c: &mut Cluster, req: &UpdateRequest) -> Result<(), StrategyError> {
        let (k, m) = (c.ec().k, c.ec().m);
        let len = req.payload.len() as u64;
        for j in 0..m {
            let log = &mut self.logs[c.node_of(req.stripe, k + j)];
            if log.bytes + len > self.budget {
                log.pressure = true;
                return Err(StrategyError::BackPressure);
            }
        }
        let delta = data_rmw(c, req.stripe, req.block, req.offset, &req.payload);
        let src = c.node_of(req.stripe, req.block);
        for j in 0..m {
            let host = c.node_of(req.stripe, k + j);
            c.send(src, host, len);
            c.charge(host, OpClass::SeqWrite, len);
            let payload = scale(c.mat(), j, req.block, &delta);
            let log = &mut self.logs[host];
            log.bytes += len;
            log.entries.push((
                ParityDeltaRecord {
                    stripe_id: req.stripe,
                    parity_index: j,
                    offset: req.offset,
                    payload,
                },
                c.now(),
            ));
        }
        Ok(())
    }

    fn background_tick(&mut self, c: &mut Cluster) -> Result<TickReport, StrategyError> {
        let mut rep = TickReport::default();
        for node in 0..self.logs.len() {
            let log = &self.logs[node];
            if log.bytes > self.threshold || (log.pressure && log.bytes > 0) {
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
        for node in 0..self.logs.len() {
            self.recycle(c, node);
        }
        Ok(())
    }

    fn on_fail(&mut self, _c: &mut Cluster, node: NodeId) -> Result<(), StrategyError> {
        // The log only holds deltas for parity stored on the same node.
        self.logs[node] = NodeLog::default();
        Ok(())
    }
}
