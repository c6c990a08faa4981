//! Block-level traces: a CSV record format, mapping onto stripes, and a
//! seeded synthetic workload generator.
//!
//! Each line is `timestamp_us,volume_id,offset_bytes,size_bytes,op` with
//! `op` one of `R` or `W`. Files ending in `.gz` are gzip-compressed.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub const SECTOR: u64 = 512;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: bad {field} {value:?}: {reason}")]
    Field {
        line: usize,
        field: &'static str,
        value: String,
        reason: &'static str,
    },
    #[error("line {line}: expected 5 comma-separated fields, found {found}")]
    Arity { line: usize, found: usize },
    #[error("volume {volume}: address {offset} beyond the {capacity} byte volume")]
    BeyondCapacity {
        volume: String,
        offset: u64,
        capacity: u64,
    },
    #[error("invalid generator parameters: {0}")]
    Params(String),
    #[error("unknown profile {0:?}")]
    Profile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Op {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub timestamp_us: u64,
    pub volume: String,
    pub offset: u64,
    pub size: u64,
    pub op: Op,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            Op::Read => 'R',
            Op::Write => 'W',
        };
        write!(f, "{},{},{},{},{}", self.timestamp_us, self.volume, self.offset, self.size, op)
    }
}

fn field_err(line: usize, field: &'static str, value: &str, reason: &'static str) -> TraceError {
    TraceError::Field {
        line,
        field,
        value: value.to_string(),
        reason,
    }
}

/// Parses one line. `line` is only used in error messages.
pub fn parse_line_at(text: &str, line: usize) -> Result<TraceRecord, TraceError> {
    let parts: Vec<&str> = text.trim().split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(TraceError::Arity {
            line,
            found: parts.len(),
        });
    }
    let num = |i: usize, name: &'static str| -> Result<u64, TraceError> {
        parts[i]
            .parse::<u64>()
            .map_err(|_| field_err(line, name, parts[i], "not a non-negative integer"))
    };
    let timestamp_us = num(0, "timestamp_us")?;
    let volume = parts[1];
    if volume.is_empty() {
        return Err(field_err(line, "volume_id", volume, "empty"));
    }
    let offset = num(2, "offset_bytes")?;
    if offset % SECTOR != 0 {
        return Err(field_err(line, "offset_bytes", parts[2], "not aligned to 512 bytes"));
    }
    let size = num(3, "size_bytes")?;
    if size == 0 {
        return Err(field_err(line, "size_bytes", parts[3], "must be positive"));
    }
    let op = match parts[4] {
        "R" | "r" => Op::Read,
        "W" | "w" => Op::Write,
        other => return Err(field_err(line, "op", other, "expected R or W")),
    };
    Ok(TraceRecord {
        timestamp_us,
        volume: volume.to_string(),
        offset,
        size,
        op,
    })
}

pub fn parse_line(text: &str) -> Result<TraceRecord, TraceError> {
    parse_line_at(text, 1)
}

pub fn format_line(rec: &TraceRecord) -> String {
    rec.to_string()
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#') || t.starts_with("timestamp")
}

/// Parses a whole trace, skipping blank lines, `#` comments and a header.
pub fn parse_reader<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| TraceError::Io {
            path: "<input>".into(),
            source,
        })?;
        if !is_skippable(&line) {
            out.push(parse_line_at(&line, i + 1)?);
        }
    }
    Ok(out)
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let io = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_reader(BufReader::new(reader))
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<(), TraceError> {
    let io = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w: Box<dyn Write> = if is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    for r in records {
        writeln!(w, "{r}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MappedKind {
    /// Write to never-written sectors; fills the stripe directly.
    Initial,
    Update,
    Read,
}

/// One trace record piece confined to a single data block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MappedOp {
    pub kind: MappedKind,
    pub stripe: u64,
    pub block: usize,
    pub offset: u64,
    pub len: u64,
    pub time: u64,
    /// Position in the mapped stream, used to derive payload bytes.
    pub index: u64,
}

/// Volume address layout: volumes get consecutive ranges of
/// `stripes_per_volume` stripes in order of first appearance, and
/// addresses map linearly onto the data blocks of those stripes.
#[derive(Debug, Clone)]
pub struct AddressMap {
    k: usize,
    block_size: u64,
    stripes_per_volume: u64,
    volumes: HashMap<String, u64>,
}

impl AddressMap {
    pub fn new(k: usize, block_size: u64, stripes_per_volume: u64) -> Self {
        Self {
            k,
            block_size,
            stripes_per_volume,
            volumes: HashMap::new(),
        }
    }

    pub fn volume_capacity(&self) -> u64 {
        self.stripes_per_volume * self.k as u64 * self.block_size
    }

    fn volume_index(&mut self, name: &str) -> u64 {
        let next = self.volumes.len() as u64;
        *self.volumes.entry(name.to_string()).or_insert(next)
    }

    /// `(stripe, block, offset in block)` of a volume address.
    pub fn locate(&mut self, volume: &str, addr: u64) -> Result<(u64, usize, u64), TraceError> {
        let cap = self.volume_capacity();
        if addr >= cap {
            return Err(TraceError::BeyondCapacity {
                volume: volume.to_string(),
                offset: addr,
                capacity: cap,
            });
        }
        let v = self.volume_index(volume);
        let stripe_bytes = self.k as u64 * self.block_size;
        let stripe = v * self.stripes_per_volume + addr / stripe_bytes;
        let within = addr % stripe_bytes;
        Ok((stripe, (within / self.block_size) as usize, within % self.block_size))
    }
}

/// Splits records at block boundaries and classifies each piece: a write
/// is an update iff any of its sectors was written earlier in the stream.
pub fn map_to_updates(records: &[TraceRecord], map: &mut AddressMap) -> Result<Vec<MappedOp>, TraceError> {
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let end = r.offset + r.size;
        if end > map.volume_capacity() {
            return Err(TraceError::BeyondCapacity {
                volume: r.volume.clone(),
                offset: end - 1,
                capacity: map.volume_capacity(),
            });
        }
        let mut addr = r.offset;
        while addr < end {
            let (stripe, block, off) = map.locate(&r.volume, addr)?;
            let len = (map.block_size - off).min(end - addr);
            let vol = map.volume_index(&r.volume);
            let kind = match r.op {
                Op::Read => MappedKind::Read,
                Op::Write => {
                    let first = addr / SECTOR;
                    let last = (addr + len).div_ceil(SECTOR);
                    let mut any = false;
                    for s in first..last {
                        any |= !seen.insert((vol, s));
                    }
                    if any {
                        MappedKind::Update
                    } else {
                        MappedKind::Initial
                    }
                }
            };
            out.push(MappedOp {
                kind,
                stripe,
                block,
                offset: off,
                len,
                time: r.timestamp_us,
                index: out.len() as u64,
            });
            addr += len;
        }
    }
    Ok(out)
}

/// Deterministic payload bytes for one mapped op.
pub fn payload_for(seed: u64, index: u64, len: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut buf = vec![0u8; len as usize];
    rng.fill(&mut buf[..]);
    buf
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthParams {
    pub total_ops: u64,
    /// Fraction of writes of exactly 4 KiB.
    pub frac_4k: f64,
    /// Fraction of writes of at most 16 KiB.
    pub frac_16k: f64,
    /// Fraction of writes that repeat an earlier extent.
    pub repeat_ratio: f64,
    /// Fraction of writes starting where the previous write ended.
    pub adjacency_ratio: f64,
    /// Probability that a fresh extent joins the repeated working set.
    pub ws_fraction: f64,
    /// Fraction of ops that are reads of earlier written extents.
    pub read_ratio: f64,
    pub volumes: u64,
    pub volume_bytes: u64,
    pub interarrival_us: u64,
    pub seed: u64,
}

impl SynthParams {
    pub fn profile(name: &str, total_ops: u64, seed: u64) -> Result<Self, TraceError> {
        let (frac_4k, frac_16k, repeat_ratio) = match name.to_ascii_lowercase().as_str() {
            "ali" => (0.46, 0.60, 0.75),
            "ten" => (0.69, 0.88, 0.69),
            "msr" => (0.60, 0.90, 0.90),
            other => return Err(TraceError::Profile(other.to_string())),
        };
        Ok(Self {
            total_ops,
            frac_4k,
            frac_16k,
            repeat_ratio,
            adjacency_ratio: 0.05,
            ws_fraction: 0.05,
            read_ratio: 0.0,
            volumes: 4,
            volume_bytes: 1 << 30,
            interarrival_us: 50,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let fracs = [
            self.frac_4k,
            self.frac_16k,
            self.repeat_ratio,
            self.adjacency_ratio,
            self.ws_fraction,
            self.read_ratio,
        ];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(TraceError::Params("fractions must lie in [0, 1]".into()));
        }
        if self.frac_4k > self.frac_16k {
            return Err(TraceError::Params("4 KiB fraction exceeds the 16 KiB fraction".into()));
        }
        if self.repeat_ratio + self.adjacency_ratio > 1.0 {
            return Err(TraceError::Params("repeat and adjacency ratios sum above 1".into()));
        }
        if self.volumes == 0 || self.volume_bytes < (1 << 20) || self.volume_bytes % 4096 != 0 {
            return Err(TraceError::Params(
                "need at least one volume of at least 1 MiB, a multiple of 4 KiB".into(),
            ));
        }
        Ok(())
    }
}

fn sample_size(rng: &mut ChaCha8Rng, p: &SynthParams) -> (u64, usize) {
    let u: f64 = rng.gen();
    if u < p.frac_4k {
        (4096, 0)
    } else if u < p.frac_16k {
        (rng.gen_range(9..=32u64) * 512, 1)
    } else {
        (rng.gen_range(5..=16u64) * 4096, 2)
    }
}

/// Generates a seeded trace following `p`.
pub fn generate(p: &SynthParams) -> Result<Vec<TraceRecord>, TraceError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let names: Vec<String> = (0..p.volumes).map(|v| format!("vol{v}")).collect();
    let mut cursor = vec![0u64; p.volumes as usize];
    // Hot extents by size class.
    let mut hot: [Vec<(usize, u64, u64)>; 3] = Default::default();
    let mut prev: Option<(usize, u64)> = None;
    let gap = 4096;
    let mut out = Vec::with_capacity(p.total_ops as usize);
    for i in 0..p.total_ops {
        let ts = i * p.interarrival_us;
        let any_hot = hot.iter().any(|h| !h.is_empty());
        if p.read_ratio > 0.0 && any_hot && rng.gen::<f64>() < p.read_ratio {
            let class = loop {
                let c = rng.gen_range(0..3);
                if !hot[c].is_empty() {
                    break c;
                }
            };
            let (v, off, size) = hot[class][rng.gen_range(0..hot[class].len())];
            out.push(TraceRecord {
                timestamp_us: ts,
                volume: names[v].clone(),
                offset: off,
                size,
                op: Op::Read,
            });
            continue;
        }
        let (size, class) = sample_size(&mut rng, p);
        let u: f64 = rng.gen();
        let (v, off) = match prev {
            Some((v, end)) if u < p.adjacency_ratio && end + size <= p.volume_bytes => {
                cursor[v] = cursor[v].max(end + size + gap);
                (v, end)
            }
            _ if u >= p.adjacency_ratio && u < p.adjacency_ratio + p.repeat_ratio && any_hot => {
                let pool = if hot[class].is_empty() {
                    hot.iter().find(|h| !h.is_empty()).expect("some hot extent")
                } else {
                    &hot[class]
                };
                let (v, off, size) = pool[rng.gen_range(0..pool.len())];
                prev = Some((v, off + size));
                out.push(TraceRecord {
                    timestamp_us: ts,
                    volume: names[v].clone(),
                    offset: off,
                    size,
                    op: Op::Write,
                });
                continue;
            }
            _ => {
                let v = rng.gen_range(0..p.volumes as usize);
                if cursor[v] + size > p.volume_bytes {
                    cursor[v] = 0;
                }
                let off = cursor[v];
                cursor[v] += size + gap;
                if rng.gen::<f64>() < p.ws_fraction || !any_hot {
                    hot[class].push((v, off, size));
                }
                (v, off)
            }
        };
        prev = Some((v, off + size));
        out.push(TraceRecord {
            timestamp_us: ts,
            volume: names[v].clone(),
            offset: off,
            size,
            op: Op::Write,
        });
    }
    Ok(out)
}

/// Empirical statistics of the writes of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct TraceStats {
    pub writes: u64,
    pub reads: u64,
    pub frac_4k: f64,
    pub frac_16k: f64,
    pub repeat_ratio: f64,
    pub adjacency_ratio: f64,
}

/// A write counts as adjacent if it starts where the previous write ended,
/// otherwise as a repeat if its start offset was written before.
pub fn measure(records: &[TraceRecord]) -> TraceStats {
    let mut st = TraceStats::default();
    let mut starts: HashSet<(&str, u64)> = HashSet::new();
    let mut prev: Option<(&str, u64)> = None;
    let (mut n4, mut n16, mut rep, mut adj) = (0u64, 0u64, 0u64, 0u64);
    for r in records {
        if r.op == Op::Read {
            st.reads += 1;
            continue;
        }
        st.writes += 1;
        if r.size <= 4096 {
            n4 += 1;
        }
        if r.size <= 16384 {
            n16 += 1;
        }
        if prev == Some((r.volume.as_str(), r.offset)) {
            adj += 1;
        } else if starts.contains(&(r.volume.as_str(), r.offset)) {
            rep += 1;
        }
        starts.insert((r.volume.as_str(), r.offset));
        prev = Some((r.volume.as_str(), r.offset + r.size));
    }
    if st.writes > 0 {
        let w = st.writes as f64;
        st.frac_4k = n4 as f64 / w;
        st.frac_16k = n16 as f64 / w;
        st.repeat_ratio = rep as f64 / w;
        st.adjacency_ratio = adj as f64 / w;
    }
    st
}
