//! Delta collection: data deltas are sent to a collector on the first
//! parity host, buffered, combined across the blocks of each stripe and
//! forwarded to the parity hosts when the buffer is recycled.
//!
//! The buffer is mirrored on the next parity hosts of each stripe, up to
//! the configured replication, so a surviving mirror takes over when the
//! collector fails.

use std::collections::{BTreeMap, BTreeSet};

use super::{combine_stripe, data_rmw, Strategy, StrategyError, TickReport, UpdateRequest};
use crate::cluster::{Cluster, NodeId, OpClass};
use crate::config::SimConfig;
use crate::extent::{ExtentMap, MergeRule};

/// Per update of L bytes with c buffer copies: 1 + m random reads,
/// 1 + m overwrites, c buffer appends and c + (m - 1) messages. Deltas of
/// different blocks that share offsets are combined into one parity delta.
#[derive(Debug)]
pub struct Cord {
    capacity: u64,
    threshold: u64,
    copies: usize,
    buffers: Vec<Buffer>,
    stale: BTreeSet<u64>,
}

#[derive(Debug, Default)]
struct Buffer {
    used: u64,
    /// stripe -> data block -> deltas.
    stripes: BTreeMap<u64, BTreeMap<usize, ExtentMap>>,
    times: Vec<u64>,
    pressure: bool,
}

impl Cord {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            capacity: cfg.cord_buffer,
            threshold: (cfg.cord_buffer as f64 * cfg.parity_log_threshold) as u64,
            copies: cfg.replication().min(cfg.m),
            buffers: (0..cfg.cluster_size).map(|_| Buffer::default()).collect(),
            stale: BTreeSet::new(),
        }
    }

    fn recycle(&mut self, c: &mut Cluster, collector: NodeId) -> u64 {
        let buf = std::mem::take(&mut self.buffers[collector]);
        let k = c.ec().k;
        let mut n = 0;
        for (stripe, blocks) in buf.stripes {
            let sender = (0..self.copies)
                .map(|i| c.node_of(stripe, k + i))
                .find(|&h| c.is_alive(h))
                .unwrap_or(collector);
            let blocks: Vec<(usize, Vec<(u64, Vec<u8>)>)> =
                blocks.into_iter().map(|(b, e)| (b, e.into_extents())).collect();
            for (off, pds) in combine_stripe(c.mat(), &blocks, false) {
                for (j, pd) in pds.iter().enumerate() {
                    c.send(sender, c.node_of(stripe, k + j), pd.len() as u64);
                    c.parity_rmw(stripe, j, off, pd);
                }
                n += 1;
            }
        }
        for t in buf.times {
            c.record_residence("collector_buffer", t);
        }
        n
    }
}

impl Strategy for Cord {
    fn name(&self) -> &'static str {
        "cord"
    }

    fn handle_update(&mut self, c: &mut Cluster, req: &UpdateRequest) -> Result<(), StrategyError> {
        let k = c.ec().k;
        let len = req.payload.len() as u64;
        let collector = c.node_of(req.stripe, k);
        if len > self.capacity {
            return Err(StrategyError::Stall(format!("update of {len} bytes exceeds the buffer")));
        }
        let buf = &mut self.buffers[collector];
        if buf.used + len > self.capacity {
            buf.pressure = true;
            return Err(StrategyError::BackPressure);
        }
        let delta = data_rmw(c, req.stripe, req.block, req.offset, &req.payload);
        let src = c.node_of(req.stripe, req.block);
        for i in 0..self.copies {
            let host = c.node_of(req.stripe, k + i);
            c.send(src, host, len);
            c.charge(host, OpClass::SeqWrite, len);
        }
        let buf = &mut self.buffers[collector];
        buf.used += len;
        buf.times.push(c.now());
        buf.stripes
            .entry(req.stripe)
            .or_default()
            .entry(req.block)
            .or_insert_with(|| ExtentMap::new(MergeRule::XorFold, false))
            .insert(req.offset, &delta);
        Ok(())
    }

    fn background_tick(&mut self, c: &mut Cluster) -> Result<TickReport, StrategyError> {
        let mut rep = TickReport::default();
        for node in 0..self.buffers.len() {
            let b = &self.buffers[node];
            if b.used > self.threshold || (b.pressure && b.used > 0) {
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
        for node in 0..self.buffers.len() {
            self.recycle(c, node);
        }
        Ok(())
    }

    fn on_fail(&mut self, c: &mut Cluster, node: NodeId) -> Result<(), StrategyError> {
        // Stripes with no surviving copy lost their buffered deltas, so
        // their parity can only be rebuilt by re-encoding.
        let k = c.ec().k;
        let copies = self.copies;
        let buf = &mut self.buffers[node];
        let lost: Vec<u64> = buf
            .stripes
            .keys()
            .copied()
            .filter(|&s| !(0..copies).any(|i| c.is_alive(c.node_of(s, k + i))))
            .collect();
        for s in lost {
            buf.stripes.remove(&s);
            self.stale.insert(s);
        }
        if buf.stripes.is_empty() {
            *buf = Buffer::default();
        }
        Ok(())
    }

    fn take_stale_stripes(&mut self) -> Vec<u64> {
        std::mem::take(&mut self.stale).into_iter().collect()
    }
}
