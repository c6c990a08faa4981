//! Update mechanisms. Each strategy owns its logs and charges the cluster
//! for every device access and message it models.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cluster::{Cluster, ClusterError, NodeId, Target};
use crate::codec::{gf, CodingMatrix};
use crate::config::SimConfig;
use crate::log_pool::PoolError;

mod cord;
mod fo;
mod parix;
mod pl;
mod plr;
mod tsue;

pub use cord::Cord;
pub use fo::FullOverwrite;
pub use parix::Parix;
pub use pl::ParityLogging;
pub use plr::ParityLoggingReserved;
pub use tsue::Tsue;

/// One update of an extent inside one data block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateRequest {
    pub stripe: u64,
    pub block: usize,
    pub offset: u64,
    pub payload: Vec<u8>,
    pub time: u64,
}

#[derive(Debug, Error)]
pub enum StrategyError {
    /// A log is full; the caller should run a background tick and retry.
    #[error("log full, retry after background work")]
    BackPressure,
    #[error("recycling made no progress: {0}")]
    Stall(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("unknown strategy {0:?}")]
    Unknown(String),
}

/// Work done by one background tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickReport {
    pub units: u64,
    pub entries: u64,
}

impl TickReport {
    pub fn is_idle(&self) -> bool {
        self.units == 0 && self.entries == 0
    }
}

pub trait Strategy {
    fn name(&self) -> &'static str;

    /// Synchronous update path, up to the acknowledgement.
    fn handle_update(&mut self, c: &mut Cluster, req: &UpdateRequest) -> Result<(), StrategyError>;

    /// Bounded deferred work.
    fn background_tick(&mut self, c: &mut Cluster) -> Result<TickReport, StrategyError>;

    /// Current logical bytes of a data extent.
    fn read(&mut self, c: &mut Cluster, stripe: u64, block: usize, offset: u64, len: u64) -> Vec<u8>;

    /// Drains every log into the blocks.
    fn quiesce(&mut self, c: &mut Cluster) -> Result<(), StrategyError>;

    /// Reacts to the loss of `node`. Recovery does not start until
    /// [`recover`] is called.
    fn on_fail(&mut self, c: &mut Cluster, node: NodeId) -> Result<(), StrategyError>;

    /// Drains whatever can be drained while lost data blocks are missing.
    fn drain_for_recovery(&mut self, c: &mut Cluster) -> Result<(), StrategyError> {
        self.quiesce(c)
    }

    /// Called once lost data blocks are rebuilt.
    fn on_recover(&mut self, _c: &mut Cluster) {}

    /// Stripes whose surviving parity missed deltas and must be re-encoded.
    fn take_stale_stripes(&mut self) -> Vec<u64> {
        Vec::new()
    }

    /// Strategy-specific counters for reports.
    fn extra_counters(&self) -> BTreeMap<String, u64> {
        BTreeMap::new()
    }
}

pub const STRATEGY_NAMES: [&str; 6] = ["fo", "pl", "plr", "parix", "cord", "tsue"];

/// Builds a strategy by name. `seed` drives TSUE's recycle scheduler.
pub fn make_strategy(name: &str, cfg: &SimConfig, seed: u64) -> Result<Box<dyn Strategy>, StrategyError> {
    Ok(match name.to_ascii_lowercase().as_str() {
        "fo" => Box::new(FullOverwrite::new()),
        "pl" => Box::new(ParityLogging::new(cfg)),
        "plr" => Box::new(ParityLoggingReserved::new(cfg)),
        "parix" => Box::new(Parix::new(cfg)),
        "cord" => Box::new(Cord::new(cfg)),
        "tsue" => Box::new(Tsue::new(cfg, seed)),
        other => return Err(StrategyError::Unknown(other.to_string())),
    })
}

/// Outcome of [`recover`].
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct RecoveryReport {
    pub rebuilt_data: Vec<(u64, usize)>,
    pub rebuilt_parity: Vec<(u64, usize)>,
    pub reencoded_stale: Vec<u64>,
    pub verified: bool,
}

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("post-recovery check failed: {0}")]
    Verify(String),
}

/// Rebuilds every failed node: drains the logs that do not depend on lost
/// data, decodes lost data blocks, finishes draining and re-encodes lost
/// or stale parity.
pub fn recover(c: &mut Cluster, s: &mut dyn Strategy) -> Result<RecoveryReport, RecoveryError> {
    c.check_recoverable()?;
    s.drain_for_recovery(c)?;
    let rebuilt_data = c.rebuild_lost_data()?;
    s.on_recover(c);
    s.quiesce(c)?;
    let rebuilt_parity = c.rebuild_lost_parity();
    let mut stale = s.take_stale_stripes();
    stale.sort_unstable();
    stale.dedup();
    for &st in &stale {
        c.reencode_parity(st);
    }
    c.mark_recovered();
    for st in c.stripes() {
        c.check_stripe(st).map_err(|d| RecoveryError::Verify(d.to_string()))?;
    }
    Ok(RecoveryReport {
        rebuilt_data,
        rebuilt_parity,
        reencoded_stale: stale,
        verified: true,
    })
}

/// Reads the old bytes, overwrites them in place and returns the delta.
pub(crate) fn data_rmw(c: &mut Cluster, stripe: u64, block: usize, off: u64, new: &[u8]) -> Vec<u8> {
    let mut delta = c.block_read(stripe, block, off, new.len() as u64);
    c.block_overwrite(stripe, block, off, new, Target::Data);
    gf::xor_into(&mut delta, new);
    delta
}

/// Coefficient-scaled copy of a data delta.
pub(crate) fn scale(mat: &CodingMatrix, parity: usize, block: usize, delta: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; delta.len()];
    gf::mul_into(&mut out, mat.coef(parity, block), delta);
    out
}

/// Combines data deltas of one stripe into parity deltas.
///
/// Extents of different blocks are grouped into connected spans (touching
/// spans join when `coalesce` is set) and each span yields one parity
/// delta per parity block. Returns `(offset, [delta for parity j])`.
pub(crate) fn combine_stripe(
    mat: &CodingMatrix,
    blocks: &[(usize, Vec<(u64, Vec<u8>)>)],
    coalesce: bool,
) -> Vec<(u64, Vec<Vec<u8>>)> {
    let mut spans: Vec<(u64, u64)> = blocks
        .iter()
        .flat_map(|(_, ext)| ext.iter().map(|(o, d)| (*o, *o + d.len() as u64)))
        .collect();
    spans.sort_unstable();
    let mut merged: Vec<(u64, u64)> = Vec::new();
    for (a, b) in spans {
        match merged.last_mut() {
            Some(last) if a < last.1 || (coalesce && a == last.1) => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    let m = mat.m();
    let mut out: Vec<(u64, Vec<Vec<u8>>)> = merged
        .iter()
        .map(|&(a, b)| (a, vec![vec![0u8; (b - a) as usize]; m]))
        .collect();
    for (block, ext) in blocks {
        for (o, d) in ext {
            // Spans are sorted and disjoint, so the owner is the last span
            // starting at or before this extent.
            let i = merged.partition_point(|&(a, _)| a <= *o) - 1;
            let at = (*o - merged[i].0) as usize;
            for (j, dst) in out[i].1.iter_mut().enumerate() {
                gf::mul_acc(&mut dst[at..at + d.len()], mat.coef(j, *block), d);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_blocks;

    #[test]
    fn combine_matches_sparse_encode() {
        let mat = CodingMatrix::cauchy(4, 2).unwrap();
        let blocks = vec![
            (0usize, vec![(0u64, vec![1u8; 8]), (100, vec![2; 4])]),
            (2, vec![(4, vec![3u8; 8])]),
            (3, vec![(12, vec![4u8; 4])]),
        ];
        for coalesce in [false, true] {
            let out = combine_stripe(&mat, &blocks, coalesce);
            let spans: Vec<(u64, usize)> = out.iter().map(|(o, d)| (*o, d[0].len())).collect();
            if coalesce {
                assert_eq!(spans, vec![(0, 16), (100, 4)]);
            } else {
                assert_eq!(spans, vec![(0, 12), (12, 4), (100, 4)]);
            }
            // Dense oracle over the first 128 bytes.
            let mut dense = vec![vec![0u8; 128]; 4];
            for (b, ext) in &blocks {
                for (o, d) in ext {
                    dense[*b][*o as usize..*o as usize + d.len()].copy_from_slice(d);
                }
            }
            let refs: Vec<&[u8]> = dense.iter().map(Vec::as_slice).collect();
            let want = encode_blocks(&mat, &refs).unwrap();
            let mut got = vec![vec![0u8; 128]; 2];
            for (o, pds) in &out {
                for (j, pd) in pds.iter().enumerate() {
                    got[j][*o as usize..*o as usize + pd.len()].copy_from_slice(pd);
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn factory_names() {
        let cfg = SimConfig::default();
        for n in STRATEGY_NAMES {
            assert_eq!(make_strategy(n, &cfg, 0).unwrap().name(), n);
        }
        assert!(make_strategy("fl", &cfg, 0).is_err());
    }
}
