//! Two-stage update. The synchronous path appends the new data to a
//! replicated DataLog and acknowledges. Background recycling then cascades
//! DataLog -> DeltaLog -> ParityLog, merging records inside each log unit
//! before touching the data and parity blocks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{combine_stripe, data_rmw, scale, Strategy, StrategyError, TickReport, UpdateRequest};
use crate::cluster::{Cluster, ClusterError, NodeId, OpClass};
use crate::config::{Flags, SimConfig};
use crate::log_pool::{BlockKey, Layer, LogPool, LogRecord, PoolConfig, RecordKind, UnitState};

const QUIESCE_GUARD: usize = 100_000;

/// Per unique update of L bytes with every stage enabled: 1 + m random
/// reads, 1 + m overwrites, 4 + m sequential log appends (DataLog, its
/// replica, DeltaLog, its copy, m ParityLogs) and m + 2 messages. The
/// synchronous path performs no random device access.
#[derive(Debug)]
pub struct Tsue {
    flags: Flags,
    copies: usize,
    pools_per_device: usize,
    tick_us: u64,
    /// Indexed by layer, then node, then pool.
    pools: [Vec<Vec<LogPool>>; 3],
    rng: ChaCha8Rng,
    frozen: BTreeSet<NodeId>,
    lost_log: Option<NodeId>,
    stats: BTreeMap<&'static str, u64>,
}

fn layer_index(l: Layer) -> usize {
    match l {
        Layer::Data => 0,
        Layer::Delta => 1,
        Layer::Parity => 2,
    }
}

fn layer_name(l: Layer) -> &'static str {
    match l {
        Layer::Data => "data_log",
        Layer::Delta => "delta_log",
        Layer::Parity => "parity_log",
    }
}

const LAYERS: [Layer; 3] = [Layer::Data, Layer::Delta, Layer::Parity];

impl Tsue {
    pub fn new(cfg: &SimConfig, seed: u64) -> Self {
        let flags = cfg.flags;
        let q = cfg.pools;
        let (min_units, max_units) = if flags.o3 { (q.min_units, q.max_units) } else { (2, 2) };
        let p = if flags.o4 { q.pools_per_device } else { 1 };
        let base = PoolConfig {
            unit_capacity: q.unit_capacity,
            min_units,
            max_units,
            block_size: cfg.block_size,
            merge: true,
        };
        let merge = [flags.o1, true, flags.o2];
        let pools = std::array::from_fn(|li| {
            (0..cfg.cluster_size)
                .map(|node| {
                    (0..p)
                        .map(|i| {
                            let id = ((node * 3 + li) * p + i) as u64;
                            LogPool::new(id, PoolConfig { merge: merge[li], ..base })
                        })
                        .collect()
                })
                .collect()
        });
        Self {
            flags,
            copies: cfg.replication(),
            pools_per_device: p,
            tick_us: cfg.tick_us,
            pools,
            rng: ChaCha8Rng::seed_from_u64(seed),
            frozen: BTreeSet::new(),
            lost_log: None,
            stats: BTreeMap::new(),
        }
    }

    fn bump(&mut self, name: &'static str, by: u64) {
        *self.stats.entry(name).or_default() += by;
    }

    fn pool_of(&self, layer: Layer, stripe: u64, slot: usize) -> usize {
        let h = match layer {
            Layer::Delta => stripe.wrapping_mul(31),
            _ => stripe.wrapping_mul(31).wrapping_add(slot as u64),
        };
        (h % self.pools_per_device as u64) as usize
    }

    fn pool(&self, layer: Layer, node: NodeId, idx: usize) -> &LogPool {
        &self.pools[layer_index(layer)][node][idx]
    }

    fn pool_mut(&mut self, layer: Layer, node: NodeId, idx: usize) -> &mut LogPool {
        &mut self.pools[layer_index(layer)][node][idx]
    }

    pub fn data_pool(&self, node: NodeId, stripe: u64, block: usize) -> &LogPool {
        self.pool(Layer::Data, node, self.pool_of(Layer::Data, stripe, block))
    }

    /// Appends to a downstream log, recycling it first if it is full.
    fn append_downstream(
        &mut self,
        c: &mut Cluster,
        node: NodeId,
        rec: LogRecord,
    ) -> Result<(), StrategyError> {
        let layer = rec.key.layer;
        let idx = self.pool_of(layer, rec.key.stripe, rec.key.slot);
        let len = rec.payload.len() as u64;
        if !self.pool(layer, node, idx).can_accept(len) {
            self.recycle_pool(c, layer, node, idx)?;
            if !self.pool(layer, node, idx).can_accept(len) {
                return Err(StrategyError::Stall(format!(
                    "{} pool {idx} on node {node} stays full",
                    layer_name(layer)
                )));
            }
        }
        self.pool_mut(layer, node, idx).append(rec)?;
        c.charge(node, OpClass::SeqWrite, len);
        Ok(())
    }

    fn recycle_pool(&mut self, c: &mut Cluster, layer: Layer, node: NodeId, idx: usize) -> Result<u64, StrategyError> {
        let mut n = 0;
        for id in self.pool(layer, node, idx).recyclable() {
            n += self.recycle_unit(c, layer, node, idx, id)?;
        }
        Ok(n)
    }

    fn recycle_unit(
        &mut self,
        c: &mut Cluster,
        layer: Layer,
        node: NodeId,
        idx: usize,
        id: u64,
    ) -> Result<u64, StrategyError> {
        let keys = self.pool_mut(layer, node, idx).start_recycle(id)?;
        let mut entries = 0;
        match layer {
            Layer::Data => {
                for key in keys {
                    let ext = self.pool(layer, node, idx).delivery(id, &key)?;
                    entries += ext.len() as u64;
                    self.recycle_data(c, node, key, ext)?;
                    self.pool_mut(layer, node, idx).mark_delivered(id, key)?;
                }
            }
            Layer::Delta => {
                let mut by_stripe: BTreeMap<u64, Vec<BlockKey>> = BTreeMap::new();
                for key in keys {
                    by_stripe.entry(key.stripe).or_default().push(key);
                }
                for (stripe, keys) in by_stripe {
                    let mut blocks = Vec::with_capacity(keys.len());
                    for key in &keys {
                        blocks.push((key.slot, self.pool(layer, node, idx).delivery(id, key)?));
                    }
                    entries += self.recycle_delta(c, node, stripe, &blocks)?;
                    for key in keys {
                        self.pool_mut(layer, node, idx).mark_delivered(id, key)?;
                    }
                }
            }
            Layer::Parity => {
                for key in keys {
                    let ext = self.pool(layer, node, idx).delivery(id, &key)?;
                    for (off, d) in &ext {
                        c.parity_rmw(key.stripe, key.slot, *off, d);
                    }
                    entries += ext.len() as u64;
                    self.pool_mut(layer, node, idx).mark_delivered(id, key)?;
                }
            }
        }
        let pool = self.pool_mut(layer, node, idx);
        pool.finish_recycle(id)?;
        let times: Vec<u64> = pool
            .unit(id)
            .map(|u| u.headers().iter().map(|h| h.time).collect())
            .unwrap_or_default();
        for t in times {
            c.record_residence(layer_name(layer), t);
        }
        Ok(entries)
    }

    fn recycle_data(
        &mut self,
        c: &mut Cluster,
        node: NodeId,
        key: BlockKey,
        extents: Vec<(u64, Vec<u8>)>,
    ) -> Result<(), StrategyError> {
        let (k, m) = (c.ec().k, c.ec().m);
        let now = c.now();
        for (off, new) in extents {
            let delta = data_rmw(c, key.stripe, key.slot, off, &new);
            let len = delta.len() as u64;
            if self.flags.o5 {
                let hosts = c.placement().deltalog_hosts(key.stripe, self.copies);
                for &h in &hosts[1..] {
                    c.send(node, h, len);
                    c.charge(h, OpClass::SeqWrite, len);
                }
                self.bump("delta_messages", hosts.len() as u64);
                c.send(node, hosts[0], len);
                self.append_downstream(
                    c,
                    hosts[0],
                    LogRecord {
                        key: BlockKey::new(key.stripe, key.slot, Layer::Delta),
                        offset: off,
                        kind: RecordKind::DataDelta,
                        payload: delta,
                        time: now,
                    },
                )?;
            } else {
                for j in 0..m {
                    let host = c.node_of(key.stripe, k + j);
                    let pd = scale(c.mat(), j, key.slot, &delta);
                    c.send(node, host, len);
                    self.bump("delta_messages", 1);
                    self.append_downstream(
                        c,
                        host,
                        LogRecord {
                            key: BlockKey::new(key.stripe, j, Layer::Parity),
                            offset: off,
                            kind: RecordKind::ParityDelta,
                            payload: pd,
                            time: now,
                        },
                    )?;
                }
            }
        }
        Ok(())
    }

    fn recycle_delta(
        &mut self,
        c: &mut Cluster,
        node: NodeId,
        stripe: u64,
        blocks: &[(usize, Vec<(u64, Vec<u8>)>)],
    ) -> Result<u64, StrategyError> {
        let k = c.ec().k;
        let now = c.now();
        let combined = combine_stripe(c.mat(), blocks, true);
        self.bump("cross_block_combines", 1);
        let n = combined.len() as u64;
        for (off, pds) in combined {
            for (j, pd) in pds.into_iter().enumerate() {
                let host = c.node_of(stripe, k + j);
                if host != node {
                    self.bump("delta_messages", 1);
                }
                c.send(node, host, pd.len() as u64);
                self.append_downstream(
                    c,
                    host,
                    LogRecord {
                        key: BlockKey::new(stripe, j, Layer::Parity),
                        offset: off,
                        kind: RecordKind::ParityDelta,
                        payload: pd,
                        time: now,
                    },
                )?;
            }
        }
        Ok(n)
    }

    fn skip(&self, layer: Layer, node: NodeId) -> bool {
        layer == Layer::Data && self.frozen.contains(&node)
    }

    fn all_drained(&self) -> bool {
        LAYERS.iter().all(|&l| {
            self.pools[layer_index(l)]
                .iter()
                .enumerate()
                .all(|(node, ps)| self.skip(l, node) || ps.iter().all(LogPool::is_drained))
        })
    }

    fn flush_all(&mut self) {
        for l in LAYERS {
            for node in 0..self.pools[layer_index(l)].len() {
                if self.skip(l, node) {
                    continue;
                }
                for p in self.pools[layer_index(l)][node].iter_mut() {
                    p.flush();
                }
            }
        }
    }

    fn drain(&mut self, c: &mut Cluster) -> Result<(), StrategyError> {
        for _ in 0..QUIESCE_GUARD {
            if self.all_drained() {
                return Ok(());
            }
            self.flush_all();
            c.set_now(c.now() + self.tick_us);
            self.background_tick(c)?;
        }
        Err(StrategyError::Stall("logs did not drain".into()))
    }

    /// Read-cache outcome counters.
    pub fn cache_hits(&self) -> u64 {
        self.stats.get("cache_hits").copied().unwrap_or(0)
    }
}

impl Strategy for Tsue {
    fn name(&self) -> &'static str {
        "tsue"
    }

    fn handle_update(&mut self, c: &mut Cluster, req: &UpdateRequest) -> Result<(), StrategyError> {
        let node = c.node_of(req.stripe, req.block);
        let idx = self.pool_of(Layer::Data, req.stripe, req.block);
        let len = req.payload.len() as u64;
        let pool = self.pool_mut(Layer::Data, node, idx);
        if !pool.can_accept(len) {
            return Err(StrategyError::BackPressure);
        }
        pool.append(LogRecord {
            key: BlockKey::new(req.stripe, req.block, Layer::Data),
            offset: req.offset,
            kind: RecordKind::RawData,
            payload: req.payload.clone(),
            time: c.now(),
        })?;
        c.charge(node, OpClass::SeqWrite, len);
        for h in c.placement().datalog_replicas(node, self.copies) {
            c.send(node, h, len);
            c.charge(h, OpClass::SeqWrite, len);
            self.bump("replica_messages", 1);
        }
        Ok(())
    }

    fn background_tick(&mut self, c: &mut Cluster) -> Result<TickReport, StrategyError> {
        let mut work: Vec<(Layer, NodeId, usize)> = Vec::new();
        for l in LAYERS {
            for (node, ps) in self.pools[layer_index(l)].iter().enumerate() {
                if self.skip(l, node) {
                    continue;
                }
                for (i, p) in ps.iter().enumerate() {
                    if !p.recyclable().is_empty() {
                        work.push((l, node, i));
                    }
                }
            }
        }
        work.shuffle(&mut self.rng);
        let mut rep = TickReport::default();
        for (l, node, i) in work {
            // Unit ids are reused, so the list is taken afresh: forced
            // recycling of a full downstream pool may have changed it.
            for id in self.pool(l, node, i).recyclable() {
                if self.pool(l, node, i).unit(id).map(|u| u.state()) == Some(UnitState::Recyclable) {
                    rep.entries += self.recycle_unit(c, l, node, i, id)?;
                    rep.units += 1;
                }
            }
        }
        if self.flags.o3 {
            for layer in self.pools.iter_mut() {
                for ps in layer.iter_mut() {
                    for p in ps.iter_mut() {
                        let busy = p
                            .units()
                            .filter(|u| matches!(u.state(), UnitState::Recyclable | UnitState::Recycling))
                            .count();
                        p.resize(busy + 1);
                    }
                }
            }
        }
        Ok(rep)
    }

    fn read(&mut self, c: &mut Cluster, stripe: u64, block: usize, offset: u64, len: u64) -> Vec<u8> {
        let node = c.node_of(stripe, block);
        let key = BlockKey::new(stripe, block, Layer::Data);
        let pool = self.data_pool(node, stripe, block);
        if let Some(bytes) = pool.lookup(&key, offset, len) {
            self.bump("cache_hits", 1);
            return bytes;
        }
        let mut buf = c.block_read(stripe, block, offset, len);
        self.data_pool(node, stripe, block).overlay(&key, offset, &mut buf);
        self.bump("cache_misses", 1);
        buf
    }

    fn quiesce(&mut self, c: &mut Cluster) -> Result<(), StrategyError> {
        self.drain(c)
    }

    fn on_fail(&mut self, c: &mut Cluster, node: NodeId) -> Result<(), StrategyError> {
        let replicas_alive = c
            .placement()
            .datalog_replicas(node, self.copies)
            .into_iter()
            .any(|h| h != node && c.is_alive(h));
        let data_pending = self.pools[0][node].iter().any(|p| !p.is_drained());
        if data_pending && !replicas_alive {
            self.lost_log = Some(node);
        }
        let delta_pending: BTreeSet<u64> = self.pools[1][node]
            .iter()
            .flat_map(|p| p.units().filter(|u| u.state() != UnitState::Recycled).flat_map(|u| u.keys().map(|k| k.stripe)))
            .collect();
        for s in delta_pending {
            let hosts = c.placement().deltalog_hosts(s, self.copies);
            if !hosts[1..].iter().any(|&h| h != node && c.is_alive(h)) {
                self.lost_log = Some(node);
            }
        }
        // The DataLog and DeltaLog survive on their copies; the DataLog
        // waits until the lost data block is rebuilt.
        self.frozen.insert(node);
        for p in self.pools[2][node].iter_mut() {
            p.clear();
        }
        Ok(())
    }

    fn drain_for_recovery(&mut self, c: &mut Cluster) -> Result<(), StrategyError> {
        if let Some(node) = self.lost_log {
            return Err(ClusterError::LogLost { node }.into());
        }
        self.drain(c)
    }

    fn on_recover(&mut self, _c: &mut Cluster) {
        self.frozen.clear();
    }

    fn extra_counters(&self) -> BTreeMap<String, u64> {
        self.stats.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}
