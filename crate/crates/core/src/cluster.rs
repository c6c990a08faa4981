//! Simulated cluster: placement, sparse block stores, device and network
//! accounting, failure injection and block reconstruction.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, gf, CodecError, CodingMatrix, EcConfig};
use crate::config::{DeviceCosts, NetCosts, SimConfig};
use crate::PAGE_SIZE;

pub type NodeId = usize;

const PAGE: usize = PAGE_SIZE as usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("cluster of {nodes} nodes cannot place {width} distinct blocks")]
    TooSmall { nodes: usize, width: usize },
    #[error("stripe {stripe} lost {lost} blocks, more than the {m} the code tolerates")]
    Unrecoverable { stripe: u64, lost: usize, m: usize },
    #[error("log records of node {node} have no surviving copy")]
    LogLost { node: NodeId },
    #[error("node {0} does not exist")]
    NoSuchNode(NodeId),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Deterministic rotation placement: role `r` of stripe `s` lives on node
/// `(s + r) mod n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub nodes: usize,
    pub k: usize,
    pub m: usize,
}

impl Placement {
    pub fn new(nodes: usize, k: usize, m: usize) -> Result<Self, ClusterError> {
        if nodes < k + m {
            return Err(ClusterError::TooSmall {
                nodes,
                width: k + m,
            });
        }
        Ok(Self { nodes, k, m })
    }

    #[inline]
    pub fn node_of(&self, stripe: u64, role: usize) -> NodeId {
        ((stripe % self.nodes as u64) as usize + role) % self.nodes
    }

    pub fn stripe_nodes(&self, stripe: u64) -> Vec<NodeId> {
        (0..self.k + self.m).map(|r| self.node_of(stripe, r)).collect()
    }

    /// Hosts of the extra DataLog copies for records written on `node`.
    pub fn datalog_replicas(&self, node: NodeId, copies: usize) -> Vec<NodeId> {
        (1..copies).map(|i| (node + i) % self.nodes).collect()
    }

    /// DeltaLog hosts of a stripe: the primary on the first parity host,
    /// copies on the following parity hosts, then on the next nodes.
    pub fn deltalog_hosts(&self, stripe: u64, copies: usize) -> Vec<NodeId> {
        let mut hosts = vec![self.node_of(stripe, self.k)];
        let mut next = hosts[0];
        for c in 1..copies.max(1) {
            let n = if c < self.m {
                self.node_of(stripe, self.k + c)
            } else {
                loop {
                    next = (next + 1) % self.nodes;
                    if !hosts.contains(&next) {
                        break next;
                    }
                }
            };
            hosts.push(n);
        }
        hosts
    }
}

/// Placement of one stripe's k + m blocks.
pub fn place_stripe(stripe: u64, ec: &EcConfig, nodes: usize) -> Result<Vec<NodeId>, ClusterError> {
    Ok(Placement::new(nodes, ec.k, ec.m)?.stripe_nodes(stripe))
}

/// A block stored as 4 KiB pages; unwritten pages read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseBlock {
    pages: HashMap<u64, Box<[u8; PAGE]>>,
}

impl SparseBlock {
    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn page(&self, p: u64) -> Option<&[u8; PAGE]> {
        self.pages.get(&p).map(|b| &**b)
    }

    pub fn page_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.pages.keys().copied()
    }

    fn page_mut(&mut self, p: u64) -> &mut [u8; PAGE] {
        self.pages.entry(p).or_insert_with(|| Box::new([0u8; PAGE]))
    }

    fn chunks(off: u64, len: usize) -> impl Iterator<Item = (u64, usize, usize, usize)> {
        // (page, offset within page, offset within buffer, length)
        let mut pos = 0usize;
        std::iter::from_fn(move || {
            if pos >= len {
                return None;
            }
            let abs = off + pos as u64;
            let page = abs / PAGE_SIZE;
            let in_page = (abs % PAGE_SIZE) as usize;
            let n = (PAGE - in_page).min(len - pos);
            let item = (page, in_page, pos, n);
            pos += n;
            Some(item)
        })
    }

    pub fn read(&self, off: u64, buf: &mut [u8]) {
        for (p, ip, bp, n) in Self::chunks(off, buf.len()) {
            match self.pages.get(&p) {
                Some(pg) => buf[bp..bp + n].copy_from_slice(&pg[ip..ip + n]),
                None => buf[bp..bp + n].fill(0),
            }
        }
    }

    pub fn write(&mut self, off: u64, data: &[u8]) {
        for (p, ip, bp, n) in Self::chunks(off, data.len()) {
            self.page_mut(p)[ip..ip + n].copy_from_slice(&data[bp..bp + n]);
        }
    }

    pub fn xor(&mut self, off: u64, data: &[u8]) {
        for (p, ip, bp, n) in Self::chunks(off, data.len()) {
            gf::xor_into(&mut self.page_mut(p)[ip..ip + n], &data[bp..bp + n]);
        }
    }

    pub fn set_page(&mut self, p: u64, bytes: &[u8]) {
        self.page_mut(p).copy_from_slice(bytes);
    }
}

/// An I/O stream on one device; sequential access is judged per region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Region {
    Block { stripe: u64, role: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    SeqRead,
    RandRead,
    SeqWrite,
    RandWrite,
}

/// What an in-place write lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Data,
    Parity,
    Reserved,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceCounters {
    pub seq_read_ops: u64,
    pub seq_read_bytes: u64,
    pub rand_read_ops: u64,
    pub rand_read_bytes: u64,
    pub seq_write_ops: u64,
    pub seq_write_bytes: u64,
    pub rand_write_ops: u64,
    pub rand_write_bytes: u64,
    pub overwrite_data_ops: u64,
    pub overwrite_data_bytes: u64,
    pub overwrite_parity_ops: u64,
    pub overwrite_parity_bytes: u64,
    pub overwrite_reserved_ops: u64,
    pub overwrite_reserved_bytes: u64,
    pub busy_us: f64,
}

impl DeviceCounters {
    pub fn read_ops(&self) -> u64 {
        self.seq_read_ops + self.rand_read_ops
    }

    pub fn write_ops(&self) -> u64 {
        self.seq_write_ops + self.rand_write_ops
    }

    pub fn read_write_ops(&self) -> u64 {
        self.read_ops() + self.write_ops()
    }

    pub fn read_write_bytes(&self) -> u64 {
        self.seq_read_bytes + self.rand_read_bytes + self.seq_write_bytes + self.rand_write_bytes
    }

    pub fn overwrite_ops(&self) -> u64 {
        self.overwrite_data_ops + self.overwrite_parity_ops + self.overwrite_reserved_ops
    }

    pub fn overwrite_bytes(&self) -> u64 {
        self.overwrite_data_bytes + self.overwrite_parity_bytes + self.overwrite_reserved_bytes
    }

    pub fn random_ops(&self) -> u64 {
        self.rand_read_ops + self.rand_write_ops
    }

    fn add(&mut self, o: &Self) {
        self.seq_read_ops += o.seq_read_ops;
        self.seq_read_bytes += o.seq_read_bytes;
        self.rand_read_ops += o.rand_read_ops;
        self.rand_read_bytes += o.rand_read_bytes;
        self.seq_write_ops += o.seq_write_ops;
        self.seq_write_bytes += o.seq_write_bytes;
        self.rand_write_ops += o.rand_write_ops;
        self.rand_write_bytes += o.rand_write_bytes;
        self.overwrite_data_ops += o.overwrite_data_ops;
        self.overwrite_data_bytes += o.overwrite_data_bytes;
        self.overwrite_parity_ops += o.overwrite_parity_ops;
        self.overwrite_parity_bytes += o.overwrite_parity_bytes;
        self.overwrite_reserved_ops += o.overwrite_reserved_ops;
        self.overwrite_reserved_bytes += o.overwrite_reserved_bytes;
        self.busy_us += o.busy_us;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetCounters {
    pub messages: u64,
    pub bytes: u64,
    pub busy_us: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub device: DeviceCounters,
    pub network: NetCounters,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidenceStats {
    pub count: u64,
    pub mean_us: f64,
    pub p50_us: u64,
    pub p90_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

impl ResidenceStats {
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let pct = |p: f64| s[((s.len() - 1) as f64 * p).round() as usize];
        Self {
            count: s.len() as u64,
            mean_us: s.iter().sum::<u64>() as f64 / s.len() as f64,
            p50_us: pct(0.50),
            p90_us: pct(0.90),
            p99_us: pct(0.99),
            max_us: *s.last().expect("non-empty"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncStats {
    pub updates: u64,
    pub mean_us: f64,
    pub max_us: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub nodes: Vec<NodeMetrics>,
    pub aggregate: NodeMetrics,
    pub residence: BTreeMap<String, ResidenceStats>,
    pub sync: SyncStats,
}

/// A parity mismatch found by [`Cluster::check_stripe`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub stripe: u64,
    pub role: usize,
    pub offset: u64,
    pub len: u64,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "stripe {} block {} differs in bytes [{}, {})",
            self.stripe,
            self.role,
            self.offset,
            self.offset + self.len
        )
    }
}

/// First and last differing byte of two equal-length slices.
pub fn diff_range(a: &[u8], b: &[u8]) -> Option<(usize, usize)> {
    let first = a.iter().zip(b).position(|(x, y)| x != y)?;
    let last = a.iter().zip(b).rposition(|(x, y)| x != y)?;
    Some((first, last + 1))
}

#[derive(Debug, Clone)]
pub struct Cluster {
    ec: EcConfig,
    mat: CodingMatrix,
    placement: Placement,
    costs: DeviceCosts,
    net_costs: NetCosts,
    devices: Vec<DeviceCounters>,
    net: Vec<NetCounters>,
    alive: Vec<bool>,
    blocks: HashMap<(u64, usize), SparseBlock>,
    positions: HashMap<(NodeId, Region), u64>,
    residence: BTreeMap<&'static str, Vec<u64>>,
    lost: BTreeSet<(u64, usize)>,
    now: u64,
    sync_acc: Option<f64>,
    sync: SyncStats,
    sync_total: f64,
}

impl Cluster {
    pub fn new(cfg: &SimConfig) -> Result<Self, crate::config::ConfigError> {
        cfg.validate()?;
        let ec = cfg.ec()?;
        let placement = Placement::new(cfg.cluster_size, ec.k, ec.m)
            .map_err(|e| crate::config::ConfigError::Invalid(e.to_string()))?;
        Ok(Self {
            mat: CodingMatrix::for_config(&ec)?,
            ec,
            placement,
            costs: cfg.device_costs(),
            net_costs: cfg.network,
            devices: vec![DeviceCounters::default(); cfg.cluster_size],
            net: vec![NetCounters::default(); cfg.cluster_size],
            alive: vec![true; cfg.cluster_size],
            blocks: HashMap::new(),
            positions: HashMap::new(),
            residence: BTreeMap::new(),
            lost: BTreeSet::new(),
            now: 0,
            sync_acc: None,
            sync: SyncStats::default(),
            sync_total: 0.0,
        })
    }

    pub fn ec(&self) -> &EcConfig {
        &self.ec
    }

    pub fn mat(&self) -> &CodingMatrix {
        &self.mat
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn nodes(&self) -> usize {
        self.placement.nodes
    }

    #[inline]
    pub fn node_of(&self, stripe: u64, role: usize) -> NodeId {
        self.placement.node_of(stripe, role)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn set_now(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    fn pages(bytes: u64) -> f64 {
        bytes.div_ceil(PAGE_SIZE) as f64
    }

    fn add_cost(&mut self, node: NodeId, us: f64) {
        self.devices[node].busy_us += us;
        if let Some(acc) = self.sync_acc.as_mut() {
            *acc += us;
        }
    }

    /// Charges one device operation.
    pub fn charge(&mut self, node: NodeId, class: OpClass, bytes: u64) {
        debug_assert!(bytes > 0);
        let c = &mut self.devices[node];
        let per_page = match class {
            OpClass::SeqRead => {
                c.seq_read_ops += 1;
                c.seq_read_bytes += bytes;
                self.costs.seq_read_us
            }
            OpClass::RandRead => {
                c.rand_read_ops += 1;
                c.rand_read_bytes += bytes;
                self.costs.rand_read_us
            }
            OpClass::SeqWrite => {
                c.seq_write_ops += 1;
                c.seq_write_bytes += bytes;
                self.costs.seq_write_us
            }
            OpClass::RandWrite => {
                c.rand_write_ops += 1;
                c.rand_write_bytes += bytes;
                self.costs.rand_write_us
            }
        };
        self.add_cost(node, per_page * Self::pages(bytes));
    }

    /// Charges an in-place write: one random write plus one overwrite.
    pub fn charge_overwrite(&mut self, node: NodeId, target: Target, bytes: u64) {
        self.charge(node, OpClass::RandWrite, bytes);
        self.count_overwrite(node, target, bytes);
    }

    fn count_overwrite(&mut self, node: NodeId, target: Target, bytes: u64) {
        let c = &mut self.devices[node];
        match target {
            Target::Data => {
                c.overwrite_data_ops += 1;
                c.overwrite_data_bytes += bytes;
            }
            Target::Parity => {
                c.overwrite_parity_ops += 1;
                c.overwrite_parity_bytes += bytes;
            }
            Target::Reserved => {
                c.overwrite_reserved_ops += 1;
                c.overwrite_reserved_bytes += bytes;
            }
        }
    }

    /// Sequential iff the access starts where the last one on the region ended.
    fn classify(&mut self, node: NodeId, region: Region, off: u64, len: u64) -> bool {
        let last = self.positions.insert((node, region), off + len);
        last == Some(off)
    }

    /// Charged read of a stored block.
    pub fn block_read(&mut self, stripe: u64, role: usize, off: u64, len: u64) -> Vec<u8> {
        let node = self.node_of(stripe, role);
        let seq = self.classify(node, Region::Block { stripe, role }, off, len);
        self.charge(node, if seq { OpClass::SeqRead } else { OpClass::RandRead }, len);
        self.peek(stripe, role, off, len)
    }

    /// Charged in-place write of a stored block.
    pub fn block_overwrite(&mut self, stripe: u64, role: usize, off: u64, data: &[u8], target: Target) {
        let node = self.node_of(stripe, role);
        let len = data.len() as u64;
        let seq = self.classify(node, Region::Block { stripe, role }, off, len);
        self.charge(node, if seq { OpClass::SeqWrite } else { OpClass::RandWrite }, len);
        self.count_overwrite(node, target, len);
        self.blocks.entry((stripe, role)).or_default().write(off, data);
    }

    /// Read-modify-write of a parity block with a parity delta. Writes to a
    /// lost parity block are dropped; it is re-encoded during recovery.
    pub fn parity_rmw(&mut self, stripe: u64, parity: usize, off: u64, delta: &[u8]) {
        let role = self.ec.k + parity;
        if self.lost.contains(&(stripe, role)) {
            return;
        }
        let mut bytes = self.block_read(stripe, role, off, delta.len() as u64);
        gf::xor_into(&mut bytes, delta);
        self.block_overwrite(stripe, role, off, &bytes, Target::Parity);
    }

    /// Uncharged read.
    pub fn peek(&self, stripe: u64, role: usize, off: u64, len: u64) -> Vec<u8> {
        let mut buf = vec![0u8; len as usize];
        if let Some(b) = self.blocks.get(&(stripe, role)) {
            b.read(off, &mut buf);
        }
        buf
    }

    /// Uncharged write.
    pub fn install(&mut self, stripe: u64, role: usize, off: u64, data: &[u8]) {
        self.blocks.entry((stripe, role)).or_default().write(off, data);
    }

    /// Uncharged XOR.
    pub fn install_xor(&mut self, stripe: u64, role: usize, off: u64, data: &[u8]) {
        self.blocks.entry((stripe, role)).or_default().xor(off, data);
    }

    /// Uncharged initial write of fresh data: stores it and folds it into
    /// every parity block.
    pub fn initial_write(&mut self, stripe: u64, block: usize, off: u64, data: &[u8]) {
        let old = self.peek(stripe, block, off, data.len() as u64);
        let delta = codec::compute_data_delta(&old, data).expect("equal lengths");
        self.install(stripe, block, off, data);
        let mut pd = vec![0u8; data.len()];
        for j in 0..self.ec.m {
            gf::mul_into(&mut pd, self.mat.coef(j, block), &delta);
            self.install_xor(stripe, self.ec.k + j, off, &pd);
        }
    }

    pub fn block(&self, stripe: u64, role: usize) -> Option<&SparseBlock> {
        self.blocks.get(&(stripe, role))
    }

    /// Stripes with at least one stored page.
    pub fn stripes(&self) -> BTreeSet<u64> {
        self.blocks.keys().map(|&(s, _)| s).collect()
    }

    /// Counted message; local sends are free.
    pub fn send(&mut self, src: NodeId, dst: NodeId, bytes: u64) {
        if src == dst {
            return;
        }
        let cost = self.net_costs.latency_us + self.net_costs.per_kib_us * bytes as f64 / 1024.0;
        let n = &mut self.net[src];
        n.messages += 1;
        n.bytes += bytes;
        n.busy_us += cost;
        if let Some(acc) = self.sync_acc.as_mut() {
            *acc += cost;
        }
    }

    /// Starts accumulating the cost of an update's synchronous path.
    pub fn begin_sync(&mut self) {
        self.sync_acc = Some(0.0);
    }

    /// Drops the running measurement, e.g. for an attempt that was refused.
    pub fn abort_sync(&mut self) {
        self.sync_acc = None;
    }

    pub fn end_sync(&mut self) -> f64 {
        let us = self.sync_acc.take().unwrap_or(0.0);
        self.sync.updates += 1;
        self.sync_total += us;
        self.sync.max_us = self.sync.max_us.max(us);
        self.sync.mean_us = self.sync_total / self.sync.updates as f64;
        us
    }

    /// Records how long a log record lived before recycling.
    pub fn record_residence(&mut self, layer: &'static str, appended_at: u64) {
        let now = self.now;
        self.residence
            .entry(layer)
            .or_default()
            .push(now.saturating_sub(appended_at));
    }

    pub fn device(&self, node: NodeId) -> &DeviceCounters {
        &self.devices[node]
    }

    pub fn network(&self, node: NodeId) -> &NetCounters {
        &self.net[node]
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let nodes: Vec<NodeMetrics> = self
            .devices
            .iter()
            .zip(&self.net)
            .map(|(d, n)| NodeMetrics {
                device: d.clone(),
                network: n.clone(),
            })
            .collect();
        let mut aggregate = NodeMetrics::default();
        for n in &nodes {
            aggregate.device.add(&n.device);
            aggregate.network.messages += n.network.messages;
            aggregate.network.bytes += n.network.bytes;
            aggregate.network.busy_us += n.network.busy_us;
        }
        MetricsSnapshot {
            nodes,
            aggregate,
            residence: self
                .residence
                .iter()
                .map(|(k, v)| (k.to_string(), ResidenceStats::from_samples(v)))
                .collect(),
            sync: self.sync.clone(),
        }
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.alive[node]
    }

    pub fn failed_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes()).filter(|&n| !self.alive[n]).collect()
    }

    pub fn is_lost(&self, stripe: u64, role: usize) -> bool {
        self.lost.contains(&(stripe, role))
    }

    pub fn lost(&self) -> &BTreeSet<(u64, usize)> {
        &self.lost
    }

    /// Wipes every block stored on `node`. Returns the lost blocks.
    pub fn fail_node(&mut self, node: NodeId) -> Result<Vec<(u64, usize)>, ClusterError> {
        if node >= self.nodes() {
            return Err(ClusterError::NoSuchNode(node));
        }
        self.alive[node] = false;
        let gone: Vec<(u64, usize)> = self
            .blocks
            .keys()
            .filter(|&&(s, r)| self.placement.node_of(s, r) == node)
            .copied()
            .collect();
        for key in &gone {
            self.blocks.remove(key);
            self.lost.insert(*key);
        }
        self.positions.retain(|(n, _), _| *n != node);
        Ok(gone)
    }

    /// Errors if any stripe has lost more blocks than the code tolerates.
    pub fn check_recoverable(&self) -> Result<(), ClusterError> {
        let mut per_stripe: BTreeMap<u64, usize> = BTreeMap::new();
        for &(s, _) in &self.lost {
            *per_stripe.entry(s).or_default() += 1;
        }
        match per_stripe.into_iter().find(|&(_, n)| n > self.ec.m) {
            Some((stripe, lost)) => Err(ClusterError::Unrecoverable {
                stripe,
                lost,
                m: self.ec.m,
            }),
            None => Ok(()),
        }
    }

    /// Decodes every lost data block from k surviving blocks, page by page.
    /// Surviving parity must already be consistent with surviving data.
    pub fn rebuild_lost_data(&mut self) -> Result<Vec<(u64, usize)>, ClusterError> {
        self.check_recoverable()?;
        let k = self.ec.k;
        let width = self.ec.width();
        let targets: Vec<(u64, usize)> = self.lost.iter().filter(|&&(_, r)| r < k).copied().collect();
        let mut by_stripe: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for &(s, r) in &targets {
            by_stripe.entry(s).or_default().push(r);
        }
        for (stripe, lost_roles) in by_stripe {
            let survivors: Vec<usize> = (0..width)
                .filter(|r| !self.lost.contains(&(stripe, *r)))
                .take(k)
                .collect();
            let mut pages = BTreeSet::new();
            for &r in &survivors {
                if let Some(b) = self.blocks.get(&(stripe, r)) {
                    pages.extend(b.page_ids());
                }
            }
            let zero = [0u8; PAGE];
            let mut rebuilt: Vec<SparseBlock> = vec![SparseBlock::default(); lost_roles.len()];
            for p in pages {
                let surv: Vec<(usize, &[u8])> = survivors
                    .iter()
                    .map(|&r| {
                        let bytes = self
                            .blocks
                            .get(&(stripe, r))
                            .and_then(|b| b.page(p))
                            .map_or(&zero[..], |pg| &pg[..]);
                        (r, bytes)
                    })
                    .collect();
                let out = codec::decode_recover(&self.mat, &surv, &lost_roles)?;
                for (i, (_, bytes)) in out.into_iter().enumerate() {
                    if bytes.iter().any(|&b| b != 0) {
                        rebuilt[i].set_page(p, &bytes);
                    }
                }
            }
            for (role, block) in lost_roles.iter().zip(rebuilt) {
                self.blocks.insert((stripe, *role), block);
                self.lost.remove(&(stripe, *role));
            }
        }
        Ok(targets)
    }

    /// Recomputes every parity block of `stripe` from its data blocks.
    pub fn reencode_parity(&mut self, stripe: u64) {
        let (k, m) = (self.ec.k, self.ec.m);
        let mut pages = BTreeSet::new();
        for r in 0..k + m {
            if let Some(b) = self.blocks.get(&(stripe, r)) {
                pages.extend(b.page_ids());
            }
        }
        let mut parity: Vec<SparseBlock> = vec![SparseBlock::default(); m];
        let zero = [0u8; PAGE];
        for p in pages {
            let data: Vec<&[u8]> = (0..k)
                .map(|r| {
                    self.blocks
                        .get(&(stripe, r))
                        .and_then(|b| b.page(p))
                        .map_or(&zero[..], |pg| &pg[..])
                })
                .collect();
            let enc = codec::encode_blocks(&self.mat, &data).expect("k equal pages");
            for (j, bytes) in enc.iter().enumerate() {
                parity[j].set_page(p, bytes);
            }
        }
        for (j, block) in parity.into_iter().enumerate() {
            self.blocks.insert((stripe, k + j), block);
            self.lost.remove(&(stripe, k + j));
        }
    }

    /// Re-encodes every stripe that lost a parity block.
    pub fn rebuild_lost_parity(&mut self) -> Vec<(u64, usize)> {
        let k = self.ec.k;
        let lost: Vec<(u64, usize)> = self.lost.iter().filter(|&&(_, r)| r >= k).copied().collect();
        let stripes: BTreeSet<u64> = lost.iter().map(|&(s, _)| s).collect();
        for s in stripes {
            self.reencode_parity(s);
        }
        lost
    }

    /// Clears the failed marks once every lost block is back.
    pub fn mark_recovered(&mut self) {
        if self.lost.is_empty() {
            self.alive.iter_mut().for_each(|a| *a = true);
        }
    }

    /// Checks that every parity page equals the encoding of the data pages.
    pub fn check_stripe(&self, stripe: u64) -> Result<(), Divergence> {
        let (k, m) = (self.ec.k, self.ec.m);
        let mut pages = BTreeSet::new();
        for r in 0..k + m {
            if let Some(b) = self.blocks.get(&(stripe, r)) {
                pages.extend(b.page_ids());
            }
        }
        let zero = [0u8; PAGE];
        let get = |r: usize, p: u64| -> &[u8] {
            self.blocks
                .get(&(stripe, r))
                .and_then(|b| b.page(p))
                .map_or(&zero[..], |pg| &pg[..])
        };
        for p in pages {
            let data: Vec<&[u8]> = (0..k).map(|r| get(r, p)).collect();
            let enc = codec::encode_blocks(&self.mat, &data).expect("k equal pages");
            for (j, want) in enc.iter().enumerate() {
                if let Some((a, b)) = diff_range(want, get(k + j, p)) {
                    return Err(Divergence {
                        stripe,
                        role: k + j,
                        offset: p * PAGE_SIZE + a as u64,
                        len: (b - a) as u64,
                    });
                }
            }
        }
        Ok(())
    }
}
