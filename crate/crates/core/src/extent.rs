//! Ordered, non-overlapping byte extents within one block.

use std::collections::BTreeMap;

/// How a new write combines with bytes already present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeRule {
    /// Later bytes replace earlier ones.
    NewestWins,
    /// Later bytes are XORed onto earlier ones; uncovered bytes count as zero.
    XorFold,
}

/// Extents sorted by offset. Overlapping inserts are always merged into one
/// span. Adjacent extents are concatenated only when `coalesce` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtentMap {
    rule: MergeRule,
    coalesce: bool,
    map: BTreeMap<u64, Vec<u8>>,
    bytes: u64,
}

impl ExtentMap {
    pub fn new(rule: MergeRule, coalesce: bool) -> Self {
        Self {
            rule,
            coalesce,
            map: BTreeMap::new(),
            bytes: 0,
        }
    }

    pub fn rule(&self) -> MergeRule {
        self.rule
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of extents.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    /// Bytes covered.
    pub fn covered_bytes(&self) -> u64 {
        self.bytes
    }

    pub fn clear(&mut self) {
        self.map.clear();
        self.bytes = 0;
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[u8])> + '_ {
        self.map.iter().map(|(&o, v)| (o, v.as_slice()))
    }

    pub fn into_extents(self) -> Vec<(u64, Vec<u8>)> {
        self.map.into_iter().collect()
    }

    /// Keys of extents that must merge with `[off, end)`.
    fn touching(&self, off: u64, end: u64) -> Vec<u64> {
        let mut keys = Vec::new();
        let upper = if self.coalesce { end } else { end.saturating_sub(1) };
        for (&start, data) in self.map.range(..=upper).rev() {
            let ext_end = start + data.len() as u64;
            let hit = if self.coalesce { ext_end >= off } else { ext_end > off };
            if !hit {
                break;
            }
            keys.push(start);
        }
        keys.reverse();
        keys
    }

    pub fn insert(&mut self, off: u64, data: &[u8]) {
        if data.is_empty() {
            return;
        }
        let end = off + data.len() as u64;
        let keys = self.touching(off, end);
        if keys.is_empty() {
            self.bytes += data.len() as u64;
            self.map.insert(off, data.to_vec());
            return;
        }
        let old: Vec<(u64, Vec<u8>)> = keys
            .iter()
            .map(|k| (*k, self.map.remove(k).expect("key just found")))
            .collect();
        let span_start = off.min(old[0].0);
        let last = old.last().expect("non-empty");
        let span_end = end.max(last.0 + last.1.len() as u64);
        let mut buf = vec![0u8; (span_end - span_start) as usize];
        for (start, bytes) in &old {
            self.bytes -= bytes.len() as u64;
            let at = (start - span_start) as usize;
            buf[at..at + bytes.len()].copy_from_slice(bytes);
        }
        let at = (off - span_start) as usize;
        let dst = &mut buf[at..at + data.len()];
        match self.rule {
            MergeRule::NewestWins => dst.copy_from_slice(data),
            MergeRule::XorFold => dst.iter_mut().zip(data).for_each(|(d, s)| *d ^= s),
        }
        self.bytes += buf.len() as u64;
        self.map.insert(span_start, buf);
    }

    /// Inserts only the bytes of `data` not already covered.
    pub fn fill_gaps(&mut self, off: u64, data: &[u8]) {
        for (g, glen) in self.uncovered(off, data.len() as u64) {
            let at = (g - off) as usize;
            self.insert(g, &data[at..at + glen as usize]);
        }
    }

    /// Uncovered sub-ranges of `[off, off + len)` as `(offset, len)`.
    pub fn uncovered(&self, off: u64, len: u64) -> Vec<(u64, u64)> {
        let end = off + len;
        let mut gaps = Vec::new();
        let mut cursor = off;
        let first = self
            .map
            .range(..=off)
            .next_back()
            .map(|(&s, _)| s)
            .unwrap_or(off);
        for (&start, data) in self.map.range(first..end) {
            let ext_end = start + data.len() as u64;
            if ext_end <= cursor {
                continue;
            }
            if start > cursor {
                gaps.push((cursor, start - cursor));
            }
            cursor = cursor.max(ext_end);
            if cursor >= end {
                break;
            }
        }
        if cursor < end {
            gaps.push((cursor, end - cursor));
        }
        gaps
    }

    /// Whether every byte of the range is covered.
    pub fn covers(&self, off: u64, len: u64) -> bool {
        len == 0 || self.uncovered(off, len).is_empty()
    }

    /// Copies covered bytes of `[off, off + buf.len())` into `buf`, leaving
    /// uncovered bytes untouched.
    pub fn overlay(&self, off: u64, buf: &mut [u8]) {
        let end = off + buf.len() as u64;
        let first = self
            .map
            .range(..=off)
            .next_back()
            .map(|(&s, _)| s)
            .unwrap_or(off);
        for (&start, data) in self.map.range(first..end) {
            let ext_end = start + data.len() as u64;
            let lo = start.max(off);
            let hi = ext_end.min(end);
            if lo >= hi {
                continue;
            }
            buf[(lo - off) as usize..(hi - off) as usize]
                .copy_from_slice(&data[(lo - start) as usize..(hi - start) as usize]);
        }
    }

    /// The covered bytes of the range if fully covered.
    pub fn get(&self, off: u64, len: u64) -> Option<Vec<u8>> {
        if !self.covers(off, len) {
            return None;
        }
        let mut buf = vec![0u8; len as usize];
        self.overlay(off, &mut buf);
        Some(buf)
    }
}
