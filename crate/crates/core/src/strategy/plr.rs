//! Parity logging with reserved space: each parity block has a log area
//! next to it. Appends are in-place random writes and a full area is
//! merged back into its parity block on the update path.

use std::collections::HashMap;

use super::{data_rmw, scale, Strategy, StrategyError, TickReport, UpdateRequest};
use crate::cluster::{Cluster, NodeId, OpClass, Target};
use crate::config::SimConfig;
use crate::extent::{ExtentMap, MergeRule};

/// Per update of L bytes: 1 + m random reads, 1 data overwrite, m reserved
/// area overwrites and m messages. Recycling an area costs one sequential
/// read of its used bytes plus one parity read and overwrite per extent.
#[derive(Debug)]
pub struct ParityLoggingReserved {
    reserved: u64,
    areas: HashMap<(u64, usize), Area>,
    sync_recycles: u64,
}

#[derive(Debug)]
struct Area {
    used: u64,
    deltas: ExtentMap,
    times: Vec<u64>,
}

impl ParityLoggingReserved {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            reserved: cfg.plr_reserved,
            areas: HashMap::new(),
            sync_recycles: 0,
        }
    }

    fn recycle(&mut self, c: &mut Cluster, stripe: u64, parity: usize) {
        let Some(area) = self.areas.remove(&(stripe, parity)) else { return };
        let host = c.node_of(stripe, c.ec().k + parity);
        if area.used > 0 && !c.is_lost(stripe, c.ec().k + parity) {
            c.charge(host, OpClass::SeqRead, area.used);
        }
        for (off, d) in area.deltas.iter() {
            c.parity_rmw(stripe, parity, off, d);
        }
        for t in area.times {
            c.record_residence("reserved_log", t);
        }
    }
}

impl Strategy for ParityLoggingReserved {
    fn name(&self) -> &'static str {
        "plr"
    }

    fn handle_update(&mut self, c: &mut Cluster, req: &UpdateRequest) -> Result<(), StrategyError> {
        let (k, m) = (c.ec().k, c.ec().m);
        let len = req.payload.len() as u64;
        if len > self.reserved {
            return Err(StrategyError::Stall(format!(
                "update of {len} bytes exceeds the {} byte reserved area",
                self.reserved
            )));
        }
        let delta = data_rmw(c, req.stripe, req.block, req.offset, &req.payload);
        let src = c.node_of(req.stripe, req.block);
        for j in 0..m {
            let host = c.node_of(req.stripe, k + j);
            c.send(src, host, len);
            if self.areas.get(&(req.stripe, j)).is_some_and(|a| a.used + len > self.reserved) {
                self.sync_recycles += 1;
                self.recycle(c, req.stripe, j);
            }
            c.charge_overwrite(host, Target::Reserved, len);
            let payload = scale(c.mat(), j, req.block, &delta);
            let area = self.areas.entry((req.stripe, j)).or_insert_with(|| Area {
                used: 0,
                deltas: ExtentMap::new(MergeRule::XorFold, false),
                times: Vec::new(),
            });
            area.used += len;
            area.deltas.insert(req.offset, &payload);
            area.times.push(c.now());
        }
        Ok(())
    }

    fn background_tick(&mut self, _c: &mut Cluster) -> Result<TickReport, StrategyError> {
        Ok(TickReport::default())
    }

    fn read(&mut self, c: &mut Cluster, stripe: u64, block: usize, offset: u64, len: u64) -> Vec<u8> {
        c.block_read(stripe, block, offset, len)
    }

    fn quiesce(&mut self, c: &mut Cluster) -> Result<(), StrategyError> {
        let mut keys: Vec<(u64, usize)> = self.areas.keys().copied().collect();
        keys.sort_unstable();
        for (s, j) in keys {
            self.recycle(c, s, j);
        }
        Ok(())
    }

    fn on_fail(&mut self, c: &mut Cluster, node: NodeId) -> Result<(), StrategyError> {
        let k = c.ec().k;
        self.areas.retain(|&(s, j), _| c.node_of(s, k + j) != node);
        Ok(())
    }

    fn extra_counters(&self) -> std::collections::BTreeMap<String, u64> {
        [("sync_recycles".to_string(), self.sync_recycles)].into()
    }
}
