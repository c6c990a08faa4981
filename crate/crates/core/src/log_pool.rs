//! FIFO log pools made of fixed-capacity units.
//!
//! A unit moves `EMPTY -> RECYCLABLE -> RECYCLING -> RECYCLED -> EMPTY`. The
//! single active unit sits at the tail of the queue and is the only one that
//! accepts appends. Each unit keeps a two-level index (block key, then
//! extents sorted by offset) with a per-page occupancy bitmap used to skip
//! units during lookups.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::extent::{ExtentMap, MergeRule};
use crate::PAGE_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Layer {
    Data,
    Delta,
    Parity,
}

/// Identifies one block inside one log layer. `slot` is the data block
/// index for the data and delta layers and the parity index for parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockKey {
    pub stripe: u64,
    pub slot: usize,
    pub layer: Layer,
}

impl BlockKey {
    pub fn new(stripe: u64, slot: usize, layer: Layer) -> Self {
        Self {
            stripe,
            slot,
            layer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    RawData,
    DataDelta,
    ParityDelta,
}

impl RecordKind {
    pub fn rule(self) -> MergeRule {
        match self {
            RecordKind::RawData => MergeRule::NewestWins,
            RecordKind::DataDelta | RecordKind::ParityDelta => MergeRule::XorFold,
        }
    }
}

/// A record handed to [`LogPool::append`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub key: BlockKey,
    pub offset: u64,
    pub kind: RecordKind,
    pub payload: Vec<u8>,
    /// Simulated time of the append, used for residence statistics.
    pub time: u64,
}

/// What a unit remembers about each appended record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordHeader {
    pub seq: u64,
    pub key: BlockKey,
    pub offset: u64,
    pub len: u64,
    pub kind: RecordKind,
    pub time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum UnitState {
    Empty,
    Recyclable,
    Recycling,
    Recycled,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("record payload is empty")]
    EmptyPayload,
    #[error("record [{offset}, {end}) exceeds block size {block_size}")]
    OutOfBlock {
        offset: u64,
        end: u64,
        block_size: u64,
    },
    #[error("record of {len} bytes cannot fit a unit of {capacity} bytes")]
    RecordTooLarge { len: u64, capacity: u64 },
    #[error("log pool exhausted")]
    Exhausted,
    #[error("record kind does not match earlier records of the block")]
    KindMismatch,
    #[error("unit {unit} is {state:?}, expected {expected}")]
    BadState {
        unit: u64,
        state: UnitState,
        expected: &'static str,
    },
    #[error("no unit {0}")]
    NoSuchUnit(u64),
    #[error("an older unit still holds undelivered records for the block")]
    OrderViolation,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecycleError<E> {
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("sink failed")]
    Sink(E),
}

/// Per-block second-level index.
#[derive(Debug, Clone)]
pub struct BlockIndex {
    extents: ExtentMap,
    kind: RecordKind,
    bitmap: Vec<u64>,
}

impl BlockIndex {
    fn new(kind: RecordKind) -> Self {
        Self {
            extents: ExtentMap::new(kind.rule(), true),
            kind,
            bitmap: Vec::new(),
        }
    }

    fn insert(&mut self, off: u64, data: &[u8]) {
        self.extents.insert(off, data);
        let first = off / PAGE_SIZE;
        let last = (off + data.len() as u64 - 1) / PAGE_SIZE;
        for page in first..=last {
            let (w, b) = ((page / 64) as usize, page % 64);
            if self.bitmap.len() <= w {
                self.bitmap.resize(w + 1, 0);
            }
            self.bitmap[w] |= 1 << b;
        }
    }

    pub fn page_bit(&self, page: u64) -> bool {
        let w = (page / 64) as usize;
        self.bitmap.get(w).is_some_and(|x| x & (1 << (page % 64)) != 0)
    }

    fn any_page(&self, off: u64, len: u64) -> bool {
        (off / PAGE_SIZE..=(off + len - 1) / PAGE_SIZE).any(|p| self.page_bit(p))
    }

    pub fn extents(&self) -> &ExtentMap {
        &self.extents
    }

    pub fn kind(&self) -> RecordKind {
        self.kind
    }
}

#[derive(Debug, Clone)]
pub struct LogUnit {
    id: u64,
    state: UnitState,
    capacity: u64,
    used: u64,
    headers: Vec<RecordHeader>,
    /// Raw payloads in append order, kept only when merging is disabled.
    raw: Vec<(BlockKey, u64, Vec<u8>)>,
    index: BTreeMap<BlockKey, BlockIndex>,
    delivered: BTreeSet<BlockKey>,
}

impl LogUnit {
    fn new(id: u64, capacity: u64) -> Self {
        Self {
            id,
            state: UnitState::Empty,
            capacity,
            used: 0,
            headers: Vec::new(),
            raw: Vec::new(),
            index: BTreeMap::new(),
            delivered: BTreeSet::new(),
        }
    }

    fn reset(&mut self) {
        self.state = UnitState::Empty;
        self.used = 0;
        self.headers.clear();
        self.raw.clear();
        self.index.clear();
        self.delivered.clear();
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn state(&self) -> UnitState {
        self.state
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn headers(&self) -> &[RecordHeader] {
        &self.headers
    }

    pub fn index(&self, key: &BlockKey) -> Option<&BlockIndex> {
        self.index.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &BlockKey> + '_ {
        self.index.keys()
    }

    fn pending(&self, key: &BlockKey) -> bool {
        matches!(self.state, UnitState::Recyclable | UnitState::Recycling)
            && self.index.contains_key(key)
            && !self.delivered.contains(key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub unit_capacity: u64,
    pub min_units: usize,
    pub max_units: usize,
    pub block_size: u64,
    /// Merge records in the index and deliver merged extents. When off,
    /// every raw record is delivered individually.
    pub merge: bool,
}

#[derive(Debug, Clone)]
pub struct LogPool {
    id: u64,
    cfg: PoolConfig,
    /// Activation order; the tail is the active unit.
    queue: VecDeque<LogUnit>,
    next_seq: u64,
    next_unit: u64,
}

impl LogPool {
    pub fn new(id: u64, cfg: PoolConfig) -> Self {
        assert!(cfg.min_units >= 1 && cfg.min_units <= cfg.max_units);
        assert!(cfg.unit_capacity > 0);
        let mut pool = Self {
            id,
            cfg,
            queue: VecDeque::new(),
            next_seq: 0,
            next_unit: 0,
        };
        for _ in 0..cfg.min_units {
            let unit = pool.fresh_unit();
            pool.queue.push_front(unit);
        }
        pool
    }

    fn fresh_unit(&mut self) -> LogUnit {
        let id = self.next_unit;
        self.next_unit += 1;
        LogUnit::new(id, self.cfg.unit_capacity)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn config(&self) -> &PoolConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Units in activation order, oldest first, active last.
    pub fn units(&self) -> impl DoubleEndedIterator<Item = &LogUnit> + '_ {
        self.queue.iter()
    }

    pub fn unit(&self, id: u64) -> Option<&LogUnit> {
        self.queue.iter().find(|u| u.id == id)
    }

    fn position(&self, id: u64) -> Result<usize, PoolError> {
        self.queue
            .iter()
            .position(|u| u.id == id)
            .ok_or(PoolError::NoSuchUnit(id))
    }

    pub fn active(&self) -> &LogUnit {
        self.queue.back().expect("pool always has an active unit")
    }

    /// Whether nothing in the pool is waiting to be recycled.
    pub fn is_drained(&self) -> bool {
        self.active().used == 0
            && self
                .queue
                .iter()
                .all(|u| matches!(u.state, UnitState::Empty | UnitState::Recycled))
    }

    /// Sealed units waiting for recycling, oldest first.
    pub fn recyclable(&self) -> Vec<u64> {
        self.queue
            .iter()
            .filter(|u| u.state == UnitState::Recyclable)
            .map(|u| u.id)
            .collect()
    }

    /// Whether an append of `len` bytes would currently succeed.
    pub fn can_accept(&self, len: u64) -> bool {
        let a = self.active();
        let last = self.queue.len() - 1;
        let spare = self.queue.len() < self.cfg.max_units
            || self
                .queue
                .iter()
                .take(last)
                .any(|u| matches!(u.state, UnitState::Empty | UnitState::Recycled));
        len <= self.cfg.unit_capacity && (a.used + len <= a.capacity || spare)
    }

    pub fn append(&mut self, rec: LogRecord) -> Result<u64, PoolError> {
        let len = rec.payload.len() as u64;
        if len == 0 {
            return Err(PoolError::EmptyPayload);
        }
        let end = rec.offset + len;
        if end > self.cfg.block_size {
            return Err(PoolError::OutOfBlock {
                offset: rec.offset,
                end,
                block_size: self.cfg.block_size,
            });
        }
        if len > self.cfg.unit_capacity {
            return Err(PoolError::RecordTooLarge {
                len,
                capacity: self.cfg.unit_capacity,
            });
        }
        let active = self.active();
        if active.index.get(&rec.key).is_some_and(|ix| ix.kind != rec.kind) {
            return Err(PoolError::KindMismatch);
        }
        if active.used + len > active.capacity {
            if self.rotate().is_none() {
                return Err(PoolError::Exhausted);
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let merge = self.cfg.merge;
        let unit = self.queue.back_mut().expect("active unit");
        unit.used += len;
        unit.headers.push(RecordHeader {
            seq,
            key: rec.key,
            offset: rec.offset,
            len,
            kind: rec.kind,
            time: rec.time,
        });
        unit.index
            .entry(rec.key)
            .or_insert_with(|| BlockIndex::new(rec.kind))
            .insert(rec.offset, &rec.payload);
        if !merge {
            unit.raw.push((rec.key, rec.offset, rec.payload));
        }
        if unit.used == unit.capacity {
            self.rotate();
        }
        Ok(seq)
    }

    /// Seals the active unit and activates the next one. Returns the sealed
    /// unit id, or `None` when no unit can take over, in which case the
    /// active unit stays active.
    pub fn rotate(&mut self) -> Option<u64> {
        let next = self.take_next_unit()?;
        let sealed = self.queue.back_mut().expect("active unit");
        sealed.state = UnitState::Recyclable;
        let sealed_id = sealed.id;
        self.queue.push_back(next);
        Some(sealed_id)
    }

    /// Seals the active unit only if it holds records.
    pub fn flush(&mut self) -> Option<u64> {
        if self.active().used == 0 {
            None
        } else {
            self.rotate()
        }
    }

    fn take_next_unit(&mut self) -> Option<LogUnit> {
        let last = self.queue.len() - 1;
        let pick = self
            .queue
            .iter()
            .take(last)
            .position(|u| u.state == UnitState::Empty)
            .or_else(|| {
                self.queue
                    .iter()
                    .take(last)
                    .position(|u| u.state == UnitState::Recycled)
            });
        match pick {
            Some(i) => {
                let mut unit = self.queue.remove(i).expect("index in range");
                unit.reset();
                Some(unit)
            }
            None if self.queue.len() < self.cfg.max_units => Some(self.fresh_unit()),
            None => None,
        }
    }

    /// Moves a sealed unit into RECYCLING and lists its block keys.
    pub fn start_recycle(&mut self, id: u64) -> Result<Vec<BlockKey>, PoolError> {
        let i = self.position(id)?;
        let unit = &mut self.queue[i];
        match unit.state {
            UnitState::Recyclable => unit.state = UnitState::Recycling,
            UnitState::Recycling => {}
            state => {
                return Err(PoolError::BadState {
                    unit: id,
                    state,
                    expected: "RECYCLABLE",
                })
            }
        }
        Ok(unit
            .index
            .keys()
            .filter(|k| !unit.delivered.contains(k))
            .copied()
            .collect())
    }

    /// Extents to deliver for one block of a RECYCLING unit. Merged and
    /// minimal when merging is on, otherwise every raw record in order.
    pub fn merged_extents(&self, id: u64, key: &BlockKey) -> Result<Vec<(u64, Vec<u8>)>, PoolError> {
        let unit = &self.queue[self.position(id)?];
        if unit.state != UnitState::Recycling {
            return Err(PoolError::BadState {
                unit: id,
                state: unit.state,
                expected: "RECYCLING",
            });
        }
        if !self.cfg.merge {
            return Ok(unit
                .raw
                .iter()
                .filter(|(k, _, _)| k == key)
                .map(|(_, o, p)| (*o, p.clone()))
                .collect());
        }
        Ok(unit
            .index
            .get(key)
            .map(|ix| ix.extents.iter().map(|(o, d)| (o, d.to_vec())).collect())
            .unwrap_or_default())
    }

    /// Extents for the next delivery of `key`, enforcing seal order.
    pub fn delivery(&self, id: u64, key: &BlockKey) -> Result<Vec<(u64, Vec<u8>)>, PoolError> {
        let i = self.position(id)?;
        if self.queue.iter().take(i).any(|u| u.pending(key)) {
            return Err(PoolError::OrderViolation);
        }
        self.merged_extents(id, key)
    }

    pub fn mark_delivered(&mut self, id: u64, key: BlockKey) -> Result<(), PoolError> {
        let i = self.position(id)?;
        let unit = &mut self.queue[i];
        if unit.state != UnitState::Recycling {
            return Err(PoolError::BadState {
                unit: id,
                state: unit.state,
                expected: "RECYCLING",
            });
        }
        unit.delivered.insert(key);
        Ok(())
    }

    /// Marks a RECYCLING unit RECYCLED once every block has been delivered.
    pub fn finish_recycle(&mut self, id: u64) -> Result<bool, PoolError> {
        let i = self.position(id)?;
        let unit = &mut self.queue[i];
        if unit.state != UnitState::Recycling {
            return Err(PoolError::BadState {
                unit: id,
                state: unit.state,
                expected: "RECYCLING",
            });
        }
        if unit.index.keys().all(|k| unit.delivered.contains(k)) {
            unit.state = UnitState::Recycled;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Recycles one unit through `sink`, one call per block. A sink error
    /// leaves the unit RECYCLING; calling again resumes with the blocks
    /// not yet delivered.
    pub fn recycle_unit<E, F>(&mut self, id: u64, mut sink: F) -> Result<(), RecycleError<E>>
    where
        F: FnMut(&BlockKey, &[(u64, Vec<u8>)]) -> Result<(), E>,
    {
        for key in self.start_recycle(id)? {
            let extents = self.delivery(id, &key)?;
            sink(&key, &extents).map_err(RecycleError::Sink)?;
            self.mark_delivered(id, key)?;
        }
        self.finish_recycle(id)?;
        Ok(())
    }

    /// Newest bytes for the whole range, or `None` if any byte is missing.
    pub fn lookup(&self, key: &BlockKey, off: u64, len: u64) -> Option<Vec<u8>> {
        if len == 0 {
            return Some(Vec::new());
        }
        let mut buf = vec![0u8; len as usize];
        let mut gaps = vec![(off, len)];
        for unit in self.queue.iter().rev() {
            let Some(ix) = unit.index.get(key) else { continue };
            if !ix.any_page(off, len) {
                continue;
            }
            let mut next = Vec::new();
            for &(g, glen) in &gaps {
                ix.extents.overlay(g, &mut buf[(g - off) as usize..(g - off + glen) as usize]);
                next.extend(ix.extents.uncovered(g, glen));
            }
            gaps = next;
            if gaps.is_empty() {
                return Some(buf);
            }
        }
        None
    }

    /// Writes every logged byte of the range into `buf`, oldest unit first,
    /// so the newest bytes land last. Returns whether anything was applied.
    pub fn overlay(&self, key: &BlockKey, off: u64, buf: &mut [u8]) -> bool {
        if buf.is_empty() {
            return false;
        }
        let len = buf.len() as u64;
        let mut hit = false;
        for unit in self.queue.iter() {
            if let Some(ix) = unit.index.get(key) {
                if ix.any_page(off, len) {
                    ix.extents.overlay(off, buf);
                    hit = true;
                }
            }
        }
        hit
    }

    /// Moves the unit count toward `demand`, clamped to the pool bounds.
    /// Only RECYCLED units other than the active one are released.
    pub fn resize(&mut self, demand: usize) {
        let target = demand.clamp(self.cfg.min_units, self.cfg.max_units);
        while self.queue.len() > target {
            let last = self.queue.len() - 1;
            let Some(i) = self
                .queue
                .iter()
                .take(last)
                .position(|u| u.state == UnitState::Recycled)
            else {
                break;
            };
            self.queue.remove(i);
        }
        while self.queue.len() < target {
            let unit = self.fresh_unit();
            self.queue.push_front(unit);
        }
    }

    /// Drops every record, leaving `min_units` empty units.
    pub fn clear(&mut self) {
        self.queue.clear();
        for _ in 0..self.cfg.min_units {
            let unit = self.fresh_unit();
            self.queue.push_front(unit);
        }
    }

    /// Bytes appended and not yet recycled.
    pub fn pending_bytes(&self) -> u64 {
        self.queue
            .iter()
            .filter(|u| u.state != UnitState::Recycled)
            .map(|u| u.used)
            .sum()
    }

    /// Structural invariants, for tests and debug assertions.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.queue.len();
        if n < self.cfg.min_units || n > self.cfg.max_units {
            return Err(format!("{n} units outside [{}, {}]", self.cfg.min_units, self.cfg.max_units));
        }
        if self.active().state != UnitState::Empty {
            return Err("tail unit is not the active EMPTY unit".into());
        }
        for (i, u) in self.queue.iter().enumerate() {
            if u.used > u.capacity {
                return Err(format!("unit {} over capacity", u.id));
            }
            if i + 1 < n && u.state == UnitState::Empty && u.used > 0 {
                return Err(format!("non-active unit {} is EMPTY with records", u.id));
            }
            if u.headers.iter().any(|h| !u.index.contains_key(&h.key))
                || u.index.keys().any(|k| !u.headers.iter().any(|h| h.key == *k))
            {
                return Err(format!("unit {} index keys differ from records", u.id));
            }
            if u.headers.iter().map(|h| h.len).sum::<u64>() != u.used {
                return Err(format!("unit {} used bytes differ from records", u.id));
            }
            for ix in u.index.values() {
                let mut prev_end = None;
                let mut want = vec![0u64; ix.bitmap.len()];
                for (o, d) in ix.extents.iter() {
                    if prev_end.is_some_and(|p| o <= p) {
                        return Err(format!("unit {} has adjacent or overlapping extents", u.id));
                    }
                    prev_end = Some(o + d.len() as u64);
                    for p in o / PAGE_SIZE..=(o + d.len() as u64 - 1) / PAGE_SIZE {
                        match want.get_mut((p / 64) as usize) {
                            Some(w) => *w |= 1 << (p % 64),
                            None => return Err(format!("unit {} bitmap too short", u.id)),
                        }
                    }
                }
                if want != ix.bitmap {
                    return Err(format!("unit {} bitmap disagrees with its extents", u.id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: u64 = 1024;

    fn cfg(cap: u64, min: usize, max: usize) -> PoolConfig {
        PoolConfig {
            unit_capacity: cap,
            min_units: min,
            max_units: max,
            block_size: 1 << 20,
            merge: true,
        }
    }

    fn key(slot: usize) -> BlockKey {
        BlockKey::new(0, slot, Layer::Data)
    }

    fn raw(slot: usize, offset: u64, fill: u8, len: u64) -> LogRecord {
        LogRecord {
            key: key(slot),
            offset,
            kind: RecordKind::RawData,
            payload: vec![fill; len as usize],
            time: 0,
        }
    }

    fn recycle_all(pool: &mut LogPool) -> Vec<(BlockKey, Vec<(u64, Vec<u8>)>)> {
        let mut out = Vec::new();
        for id in pool.recyclable() {
            pool.recycle_unit::<(), _>(id, |k, e| {
                out.push((*k, e.to_vec()));
                Ok(())
            })
            .unwrap();
        }
        out
    }

    #[test]
    fn append_and_adjacent_merge() {
        let mut pool = LogPool::new(0, cfg(16 << 20, 2, 4));
        pool.append(raw(0, 0, 1, 8 * K)).unwrap();
        assert_eq!(pool.active().used(), 8 * K);
        assert_eq!(pool.active().index(&key(0)).unwrap().extents().len(), 1);
        pool.append(raw(0, 8 * K, 2, 8 * K)).unwrap();
        let ext: Vec<_> = pool.active().index(&key(0)).unwrap().extents().iter().map(|(o, d)| (o, d.len())).collect();
        assert_eq!(ext, vec![(0, 16 * 1024)]);
    }

    #[test]
    fn repeated_extent_keeps_newest() {
        let mut pool = LogPool::new(0, cfg(16 << 20, 2, 4));
        for i in 0..10 {
            pool.append(raw(0, 4096, i, 4096)).unwrap();
        }
        let ix = pool.active().index(&key(0)).unwrap();
        assert_eq!(ix.extents().len(), 1);
        assert_eq!(pool.lookup(&key(0), 4096, 4096).unwrap(), vec![9; 4096]);
    }

    #[test]
    fn rotation_reuses_recycled_unit() {
        let mut pool = LogPool::new(0, cfg(8 * K, 2, 2));
        pool.append(raw(0, 0, 1, 8 * K)).unwrap();
        let first = pool.recyclable()[0];
        recycle_all(&mut pool);
        assert_eq!(pool.unit(first).unwrap().state(), UnitState::Recycled);
        pool.append(raw(0, 0, 2, 8 * K)).unwrap();
        // The second unit filled and the recycled one took over as active.
        assert_eq!(pool.active().id(), first);
        assert_eq!(pool.active().used(), 0);
        assert!(pool.active().index(&key(0)).is_none());
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn rotation_grows_then_exhausts() {
        let mut pool = LogPool::new(0, cfg(4 * K, 2, 3));
        pool.append(raw(0, 0, 1, 4 * K)).unwrap();
        pool.append(raw(0, 0, 1, 4 * K)).unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.recyclable().len(), 2);
        let id = pool.recyclable()[0];
        pool.start_recycle(id).unwrap();
        // Active unit is full and nothing can replace it.
        pool.append(raw(0, 0, 1, 4 * K)).unwrap();
        assert_eq!(pool.append(raw(0, 0, 1, 4 * K)), Err(PoolError::Exhausted));
        pool.check_invariants().unwrap();
    }

    #[test]
    fn merged_extents_cases() {
        let mut pool = LogPool::new(0, cfg(1 << 20, 2, 4));
        pool.append(raw(0, 0, 1, 8 * K)).unwrap();
        pool.append(raw(0, 4 * K, 2, 8 * K)).unwrap();
        pool.append(raw(1, 0, 3, 4 * K)).unwrap();
        pool.append(raw(1, 64 * K, 4, 4 * K)).unwrap();
        let dk = BlockKey::new(0, 0, Layer::Delta);
        for v in [0x0Fu8, 0xF0] {
            pool.append(LogRecord {
                key: dk,
                offset: 0,
                kind: RecordKind::DataDelta,
                payload: vec![v; 512],
                time: 0,
            })
            .unwrap();
        }
        let id = pool.rotate().unwrap();
        pool.start_recycle(id).unwrap();
        let e0 = pool.merged_extents(id, &key(0)).unwrap();
        assert_eq!(e0.len(), 1);
        assert_eq!(e0[0].1.len() as u64, 12 * K);
        assert!(e0[0].1[..4096].iter().all(|&b| b == 1));
        assert!(e0[0].1[4096..].iter().all(|&b| b == 2));
        let e1 = pool.merged_extents(id, &key(1)).unwrap();
        assert_eq!(e1.iter().map(|(o, _)| *o).collect::<Vec<_>>(), vec![0, 64 * K]);
        assert_eq!(pool.merged_extents(id, &dk).unwrap(), vec![(0, vec![0xFF; 512])]);
    }

    #[test]
    fn recycle_delivers_each_block_once() {
        let mut pool = LogPool::new(0, cfg(1 << 20, 2, 4));
        for s in 0..3 {
            pool.append(raw(s, 0, 1, 512)).unwrap();
            pool.append(raw(s, 512, 1, 512)).unwrap();
        }
        pool.rotate().unwrap();
        let got = recycle_all(&mut pool);
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn empty_sealed_unit_recycles_immediately() {
        let mut pool = LogPool::new(0, cfg(1 << 20, 2, 4));
        let id = pool.rotate().unwrap();
        let mut calls = 0;
        pool.recycle_unit::<(), _>(id, |_, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 0);
        assert_eq!(pool.unit(id).unwrap().state(), UnitState::Recycled);
    }

    #[test]
    fn sink_failure_is_retryable() {
        let mut pool = LogPool::new(0, cfg(1 << 20, 2, 4));
        for s in 0..3 {
            pool.append(raw(s, 0, s as u8, 512)).unwrap();
        }
        let id = pool.rotate().unwrap();
        let mut seen = Vec::new();
        let err = pool.recycle_unit(id, |k, _| {
            if k.slot == 1 {
                Err("boom")
            } else {
                seen.push(k.slot);
                Ok(())
            }
        });
        assert_eq!(err, Err(RecycleError::Sink("boom")));
        assert_eq!(pool.unit(id).unwrap().state(), UnitState::Recycling);
        pool.recycle_unit::<(), _>(id, |k, _| {
            seen.push(k.slot);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
        assert_eq!(pool.unit(id).unwrap().state(), UnitState::Recycled);
    }

    #[test]
    fn deliveries_follow_seal_order() {
        let mut pool = LogPool::new(0, cfg(1 << 20, 2, 4));
        pool.append(raw(0, 0, 1, 512)).unwrap();
        let older = pool.rotate().unwrap();
        pool.append(raw(0, 0, 2, 512)).unwrap();
        let newer = pool.rotate().unwrap();
        assert!(matches!(
            pool.recycle_unit::<(), _>(newer, |_, _| Ok(())),
            Err(RecycleError::Pool(PoolError::OrderViolation))
        ));
        let mut order = Vec::new();
        for id in [older, newer] {
            pool.recycle_unit::<(), _>(id, |_, e| {
                order.push(e[0].1[0]);
                Ok(())
            })
            .unwrap();
        }
        assert_eq!(order, vec![1, 2]);
    }

    #[test]
    fn lookup_cases() {
        let mut pool = LogPool::new(0, cfg(1 << 20, 2, 4));
        pool.append(raw(0, 0, 7, 4096)).unwrap();
        assert_eq!(pool.lookup(&key(0), 0, 4096).unwrap(), vec![7; 4096]);
        assert_eq!(pool.lookup(&key(0), 0, 8192), None);
        assert_eq!(pool.lookup(&key(1), 0, 16), None);
        pool.rotate().unwrap();
        pool.append(raw(0, 2048, 8, 4096)).unwrap();
        let got = pool.lookup(&key(0), 0, 4096).unwrap();
        assert!(got[..2048].iter().all(|&b| b == 7));
        assert!(got[2048..].iter().all(|&b| b == 8));
        // Recycled units still serve reads until reused.
        pool.rotate().unwrap();
        recycle_all(&mut pool);
        assert_eq!(pool.lookup(&key(0), 0, 6144).unwrap()[6000], 8);
    }

    #[test]
    fn overlay_applies_newest_last() {
        let mut pool = LogPool::new(0, cfg(1 << 20, 2, 4));
        pool.append(raw(0, 0, 1, 100)).unwrap();
        pool.rotate().unwrap();
        pool.append(raw(0, 50, 2, 100)).unwrap();
        let mut buf = vec![0u8; 200];
        assert!(pool.overlay(&key(0), 0, &mut buf));
        assert_eq!(buf[49], 1);
        assert_eq!(buf[50], 2);
        assert_eq!(buf[150], 0);
    }

    #[test]
    fn resize_cases() {
        let mut pool = LogPool::new(0, cfg(512, 2, 6));
        for _ in 0..5 {
            pool.append(raw(0, 0, 1, 512)).unwrap();
        }
        assert_eq!(pool.len(), 6);
        recycle_all(&mut pool);
        pool.resize(0);
        assert_eq!(pool.len(), 2);
        pool.resize(4);
        assert_eq!(pool.len(), 4);
        pool.resize(3);
        assert_eq!(pool.len(), 3);

        let mut full = LogPool::new(0, cfg(512, 2, 4));
        for _ in 0..3 {
            full.append(raw(0, 0, 1, 512)).unwrap();
        }
        full.resize(100);
        assert_eq!(full.len(), 4);
        full.resize(3);
        // Nothing is RECYCLED, so nothing can be released.
        assert_eq!(full.len(), 4);
        full.check_invariants().unwrap();
    }

    #[test]
    fn unmerged_pool_delivers_raw_records() {
        let mut pool = LogPool::new(0, PoolConfig { merge: false, ..cfg(1 << 20, 2, 4) });
        pool.append(raw(0, 0, 1, 512)).unwrap();
        pool.append(raw(0, 0, 2, 512)).unwrap();
        let id = pool.rotate().unwrap();
        pool.start_recycle(id).unwrap();
        let e = pool.merged_extents(id, &key(0)).unwrap();
        assert_eq!(e, vec![(0, vec![1; 512]), (0, vec![2; 512])]);
        assert_eq!(pool.lookup(&key(0), 0, 512).unwrap(), vec![2; 512]);
    }

    #[test]
    fn validation_errors() {
        let mut pool = LogPool::new(0, cfg(4096, 2, 4));
        assert_eq!(pool.append(raw(0, 0, 1, 0)), Err(PoolError::EmptyPayload));
        assert!(matches!(pool.append(raw(0, (1 << 20) - 10, 1, 20)), Err(PoolError::OutOfBlock { .. })));
        assert!(matches!(pool.append(raw(0, 0, 1, 8192)), Err(PoolError::RecordTooLarge { .. })));
        pool.append(raw(0, 0, 1, 16)).unwrap();
        let mut r = raw(0, 0, 1, 16);
        r.kind = RecordKind::DataDelta;
        assert_eq!(pool.append(r), Err(PoolError::KindMismatch));
    }
}
