//! Reed-Solomon coding over GF(2^8) and the incremental delta algebra used by
//! every update path: data deltas, same-extent folding, cross-block parity
//! combination and parity-delta application.
//!
//! Block indices are zero-based. A stripe role `r` is a data block when
//! `r < k` and parity block `r - k` otherwise.

pub mod gf;

use thiserror::Error;

pub use gf::{gf_add, gf_mul, GfElement};

use crate::PAGE_SIZE;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid code parameters: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("length mismatch: {left} vs {right} bytes")]
    LengthMismatch { left: usize, right: usize },
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),
    #[error("duplicate block index {0}")]
    DuplicateBlock(usize),
    #[error("extent [{offset}, {end}) outside block of {block_size} bytes")]
    OutOfRange {
        offset: u64,
        end: u64,
        block_size: u64,
    },
    #[error("{lost} blocks lost but the code tolerates only {m}")]
    TooManyLost { lost: usize, m: usize },
    #[error("survivor matrix is singular")]
    Singular,
}

/// RS(k, m) parameters with a block size in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EcConfig {
    pub k: usize,
    pub m: usize,
    pub block_size: u64,
}

impl EcConfig {
    pub fn new(k: usize, m: usize, block_size: u64) -> Result<Self, CodecError> {
        let cfg = Self { k, m, block_size };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.k == 0 || self.m == 0 {
            return Err(CodecError::InvalidConfig(format!(
                "k = {} and m = {} must both be at least 1",
                self.k, self.m
            )));
        }
        if self.k + self.m > 256 {
            return Err(CodecError::InvalidConfig(format!(
                "k + m = {} exceeds the 256 field elements",
                self.k + self.m
            )));
        }
        if self.block_size == 0 || self.block_size % PAGE_SIZE != 0 {
            return Err(CodecError::InvalidConfig(format!(
                "block size {} must be a positive multiple of {PAGE_SIZE}",
                self.block_size
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.k + self.m
    }
}

/// The m x k coefficient matrix of the parity rows.
///
/// Built as a Cauchy matrix with `x_i = i` and `y_j = k + j`, so every square
/// submatrix is invertible and `[I; C]` is MDS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingMatrix {
    k: usize,
    m: usize,
    rows: Vec<Vec<GfElement>>,
}

impl CodingMatrix {
    pub fn cauchy(k: usize, m: usize) -> Result<Self, CodecError> {
        if k == 0 || m == 0 || k + m > 256 {
            return Err(CodecError::InvalidConfig(format!("RS({k},{m})")));
        }
        let rows = (0..m)
            .map(|j| {
                (0..k)
                    .map(|i| {
                        let x = GfElement(i as u8);
                        let y = GfElement((k + j) as u8);
                        // x and y never coincide, so the sum is nonzero.
                        (x + y).inverse().expect("distinct Cauchy points")
                    })
                    .collect()
            })
            .collect();
        Ok(Self { k, m, rows })
    }

    pub fn for_config(cfg: &EcConfig) -> Result<Self, CodecError> {
        Self::cauchy(cfg.k, cfg.m)
    }

    /// Arbitrary coefficients, for algebraic tests. No MDS guarantee.
    pub fn from_rows(rows: Vec<Vec<GfElement>>) -> Result<Self, CodecError> {
        let m = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if m == 0 || k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(CodecError::Dimension("ragged or empty coefficient rows".into()));
        }
        Ok(Self { k, m, rows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Coefficient of data block `block` in parity `parity`.
    #[inline]
    pub fn coef(&self, parity: usize, block: usize) -> GfElement {
        self.rows[parity][block]
    }

    pub fn rows(&self) -> &[Vec<GfElement>] {
        &self.rows
    }

    /// Row of the full (k + m) x k generator matrix for a stripe role.
    pub fn generator_row(&self, role: usize) -> Vec<GfElement> {
        if role < self.k {
            let mut row = vec![GfElement::ZERO; self.k];
            row[role] = GfElement::ONE;
            row
        } else {
            self.rows[role - self.k].clone()
        }
    }
}

/// One stripe: k data blocks followed by m parity blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripe {
    pub stripe_id: u64,
    pub data: Vec<Vec<u8>>,
    pub parity: Vec<Vec<u8>>,
}

impl Stripe {
    pub fn encode(
        stripe_id: u64,
        mat: &CodingMatrix,
        data: Vec<Vec<u8>>,
    ) -> Result<Self, CodecError> {
        let parity = {
            let refs: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
            encode_blocks(mat, &refs)?
        };
        Ok(Self {
            stripe_id,
            data,
            parity,
        })
    }

    /// Whether the parity blocks equal the encoding of the data blocks.
    pub fn is_consistent(&self, mat: &CodingMatrix) -> bool {
        let refs: Vec<&[u8]> = self.data.iter().map(Vec::as_slice).collect();
        encode_blocks(mat, &refs).is_ok_and(|p| p == self.parity)
    }

    pub fn block(&self, role: usize) -> &[u8] {
        if role < self.data.len() {
            &self.data[role]
        } else {
            &self.parity[role - self.data.len()]
        }
    }
}

/// Data delta of one updated extent: `D_new ^ D_old`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaRecord {
    pub stripe_id: u64,
    pub block_index: usize,
    pub offset: u64,
    pub payload: Vec<u8>,
}

/// Coefficient-scaled delta ready to be XORed into one parity block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityDeltaRecord {
    pub stripe_id: u64,
    pub parity_index: usize,
    pub offset: u64,
    pub payload: Vec<u8>,
}

/// Encodes m parity blocks, enforcing the configured block size.
pub fn encode_stripe(
    cfg: &EcConfig,
    mat: &CodingMatrix,
    data: &[&[u8]],
) -> Result<Vec<Vec<u8>>, CodecError> {
    if cfg.k != mat.k() || cfg.m != mat.m() {
        return Err(CodecError::Dimension(format!(
            "config RS({},{}) vs matrix RS({},{})",
            cfg.k,
            cfg.m,
            mat.k(),
            mat.m()
        )));
    }
    if let Some(bad) = data.iter().find(|b| b.len() as u64 != cfg.block_size) {
        return Err(CodecError::LengthMismatch {
            left: bad.len(),
            right: cfg.block_size as usize,
        });
    }
    encode_blocks(mat, data)
}

/// Encodes equal-length blocks of any length.
pub fn encode_blocks(mat: &CodingMatrix, data: &[&[u8]]) -> Result<Vec<Vec<u8>>, CodecError> {
    if data.len() != mat.k() {
        return Err(CodecError::Dimension(format!(
            "{} data blocks supplied, k = {}",
            data.len(),
            mat.k()
        )));
    }
    let len = data[0].len();
    if let Some(bad) = data.iter().find(|b| b.len() != len) {
        return Err(CodecError::LengthMismatch {
            left: bad.len(),
            right: len,
        });
    }
    let mut parity = vec![vec![0u8; len]; mat.m()];
    for (j, out) in parity.iter_mut().enumerate() {
        for (i, block) in data.iter().enumerate() {
            gf::mul_acc(out, mat.coef(j, i), block);
        }
    }
    Ok(parity)
}

/// XOR of old and new bytes; subtraction in GF(2^8) is addition.
pub fn compute_data_delta(old: &[u8], new: &[u8]) -> Result<Vec<u8>, CodecError> {
    if old.len() != new.len() {
        return Err(CodecError::LengthMismatch {
            left: old.len(),
            right: new.len(),
        });
    }
    Ok(old.iter().zip(new).map(|(a, b)| a ^ b).collect())
}

/// Folds two successive deltas of one extent into the delta between the
/// oldest and newest versions.
pub fn merge_deltas_same_extent(
    older: &DeltaRecord,
    newer: &DeltaRecord,
) -> Result<DeltaRecord, CodecError> {
    if older.stripe_id != newer.stripe_id
        || older.block_index != newer.block_index
        || older.offset != newer.offset
        || older.payload.len() != newer.payload.len()
    {
        return Err(CodecError::ExtentMismatch(format!(
            "({}, {}, {}, {}) vs ({}, {}, {}, {})",
            older.stripe_id,
            older.block_index,
            older.offset,
            older.payload.len(),
            newer.stripe_id,
            newer.block_index,
            newer.offset,
            newer.payload.len()
        )));
    }
    let mut payload = older.payload.clone();
    gf::xor_into(&mut payload, &newer.payload);
    Ok(DeltaRecord {
        payload,
        ..older.clone()
    })
}

/// Combines same-extent deltas of several data blocks of one stripe into a
/// single parity delta per parity block.
pub fn combine_cross_block_deltas(
    mat: &CodingMatrix,
    stripe_id: u64,
    offset: u64,
    deltas: &[(usize, &[u8])],
) -> Result<Vec<ParityDeltaRecord>, CodecError> {
    let Some(&(_, first)) = deltas.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    let mut seen = vec![false; mat.k()];
    for &(block, payload) in deltas {
        if block >= mat.k() {
            return Err(CodecError::Dimension(format!(
                "block index {block} with k = {}",
                mat.k()
            )));
        }
        if std::mem::replace(&mut seen[block], true) {
            return Err(CodecError::DuplicateBlock(block));
        }
        if payload.len() != len {
            return Err(CodecError::ExtentMismatch(format!(
                "payload of block {block} is {} bytes, expected {len}",
                payload.len()
            )));
        }
    }
    Ok((0..mat.m())
        .map(|j| {
            let mut payload = vec![0u8; len];
            for &(block, delta) in deltas {
                gf::mul_acc(&mut payload, mat.coef(j, block), delta);
            }
            ParityDeltaRecord {
                stripe_id,
                parity_index: j,
                offset,
                payload,
            }
        })
        .collect())
}

/// Scales one data delta into the parity delta for parity `parity_index`.
pub fn parity_delta_for(mat: &CodingMatrix, delta: &DeltaRecord, parity_index: usize) -> ParityDeltaRecord {
    let mut payload = vec![0u8; delta.payload.len()];
    gf::mul_into(&mut payload, mat.coef(parity_index, delta.block_index), &delta.payload);
    ParityDeltaRecord {
        stripe_id: delta.stripe_id,
        parity_index,
        offset: delta.offset,
        payload,
    }
}

/// XORs a parity delta into its parity block in place.
pub fn apply_parity_delta(parity_block: &mut [u8], pd: &ParityDeltaRecord) -> Result<(), CodecError> {
    let end = pd.offset + pd.payload.len() as u64;
    if end > parity_block.len() as u64 {
        return Err(CodecError::OutOfRange {
            offset: pd.offset,
            end,
            block_size: parity_block.len() as u64,
        });
    }
    let start = pd.offset as usize;
    gf::xor_into(&mut parity_block[start..end as usize], &pd.payload);
    Ok(())
}

/// Square matrix inverse by Gauss-Jordan elimination.
pub(crate) fn invert(mut a: Vec<Vec<GfElement>>) -> Result<Vec<Vec<GfElement>>, CodecError> {
    let n = a.len();
    let mut inv: Vec<Vec<GfElement>> = (0..n)
        .map(|i| {
            let mut row = vec![GfElement::ZERO; n];
            row[i] = GfElement::ONE;
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .ok_or(CodecError::Singular)?;
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let scale = a[col][col].inverse().ok_or(CodecError::Singular)?;
        for c in 0..n {
            a[col][c] *= scale;
            inv[col][c] *= scale;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let factor = a[r][col];
                for c in 0..n {
                    let (av, iv) = (a[col][c], inv[col][c]);
                    a[r][c] += factor * av;
                    inv[r][c] += factor * iv;
                }
            }
        }
    }
    Ok(inv)
}

/// Rebuilds the `lost` roles from exactly k surviving blocks.
///
/// Returns `(role, bytes)` for every lost role, in the order given.
pub fn decode_recover(
    mat: &CodingMatrix,
    survivors: &[(usize, &[u8])],
    lost: &[usize],
) -> Result<Vec<(usize, Vec<u8>)>, CodecError> {
    let (k, m) = (mat.k(), mat.m());
    if lost.len() > m {
        return Err(CodecError::TooManyLost { lost: lost.len(), m });
    }
    if survivors.len() != k {
        return Err(CodecError::Dimension(format!(
            "{} survivors supplied, exactly k = {k} required",
            survivors.len()
        )));
    }
    let mut used = vec![false; k + m];
    for &(role, _) in survivors {
        if role >= k + m || std::mem::replace(&mut used[role], true) {
            return Err(CodecError::Dimension(format!("bad survivor role {role}")));
        }
    }
    for &role in lost {
        if role >= k + m || std::mem::replace(&mut used[role], true) {
            return Err(CodecError::Dimension(format!("bad lost role {role}")));
        }
    }
    if lost.is_empty() {
        return Ok(Vec::new());
    }
    let len = survivors[0].1.len();
    if let Some((_, bad)) = survivors.iter().find(|(_, b)| b.len() != len) {
        return Err(CodecError::LengthMismatch {
            left: bad.len(),
            right: len,
        });
    }

    // Recover all data blocks first; parity follows by re-encoding.
    let mut data: Vec<Option<Vec<u8>>> = vec![None; k];
    for &(role, bytes) in survivors {
        if role < k {
            data[role] = Some(bytes.to_vec());
        }
    }
    if data.iter().any(Option::is_none) {
        let a: Vec<Vec<GfElement>> = survivors
            .iter()
            .map(|&(role, _)| mat.generator_row(role))
            .collect();
        let inv = invert(a)?;
        for (i, slot) in data.iter_mut().enumerate() {
            if slot.is_none() {
                let mut out = vec![0u8; len];
                for (s, &(_, bytes)) in survivors.iter().enumerate() {
                    gf::mul_acc(&mut out, inv[i][s], bytes);
                }
                *slot = Some(out);
            }
        }
    }
    let data: Vec<Vec<u8>> = data.into_iter().map(|d| d.expect("filled")).collect();
    Ok(lost
        .iter()
        .map(|&role| {
            if role < k {
                (role, data[role].clone())
            } else {
                let j = role - k;
                let mut out = vec![0u8; len];
                for (i, block) in data.iter().enumerate() {
                    gf::mul_acc(&mut out, mat.coef(j, i), block);
                }
                (role, out)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_blocks(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Vec<u8>> {
        (0..n)
            .map(|_| (0..len).map(|_| rng.gen()).collect())
            .collect()
    }

    // Naive double loop with the table-free multiply.
    fn naive_encode(mat: &CodingMatrix, data: &[Vec<u8>]) -> Vec<Vec<u8>> {
        fn slow_mul(a: u8, b: u8) -> u8 {
            let (mut a, mut b, mut p) = (a as u16, b, 0u16);
            while b != 0 {
                if b & 1 != 0 {
                    p ^= a;
                }
                a <<= 1;
                if a & 0x100 != 0 {
                    a ^= 0x11D;
                }
                b >>= 1;
            }
            p as u8
        }
        (0..mat.m())
            .map(|j| {
                (0..data[0].len())
                    .map(|t| {
                        (0..mat.k()).fold(0u8, |acc, i| acc ^ slow_mul(mat.coef(j, i).0, data[i][t]))
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(EcConfig::new(6, 4, 4 << 20).is_ok());
        assert!(EcConfig::new(0, 2, 4096).is_err());
        assert!(EcConfig::new(2, 0, 4096).is_err());
        assert!(EcConfig::new(2, 1, 1000).is_err());
        assert!(EcConfig::new(200, 57, 4096).is_err());
    }

    #[test]
    fn zero_data_gives_zero_parity() {
        let mat = CodingMatrix::cauchy(4, 2).unwrap();
        let data = vec![vec![0u8; 64]; 4];
        let refs: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
        let parity = encode_blocks(&mat, &refs).unwrap();
        assert!(parity.iter().flatten().all(|&b| b == 0));
    }

    #[test]
    fn single_data_block_is_scaled_copy() {
        let mat = CodingMatrix::cauchy(1, 3).unwrap();
        let d: Vec<u8> = (0..=255).collect();
        let parity = encode_blocks(&mat, &[&d]).unwrap();
        for (j, p) in parity.iter().enumerate() {
            for (t, &b) in p.iter().enumerate() {
                assert_eq!(b, gf_mul(mat.coef(j, 0), GfElement(d[t])).0);
            }
        }
    }

    #[test]
    fn encode_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mat = CodingMatrix::cauchy(2, 1).unwrap();
        for _ in 0..20 {
            let data = random_blocks(&mut rng, 2, 64);
            let refs: Vec<&[u8]> = data.iter().map(Vec::as_slice).collect();
            assert_eq!(encode_blocks(&mat, &refs).unwrap(), naive_encode(&mat, &data));
        }
    }

    #[test]
    fn encode_stripe_checks_dimensions() {
        let cfg = EcConfig::new(2, 1, 4096).unwrap();
        let mat = CodingMatrix::for_config(&cfg).unwrap();
        let a = vec![0u8; 4096];
        let short = vec![0u8; 100];
        assert!(encode_stripe(&cfg, &mat, &[&a, &a]).is_ok());
        assert!(matches!(
            encode_stripe(&cfg, &mat, &[&a]),
            Err(CodecError::Dimension(_))
        ));
        assert!(matches!(
            encode_stripe(&cfg, &mat, &[&a, &short]),
            Err(CodecError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn data_delta_cases() {
        let x = vec![0xAB; 16];
        assert_eq!(compute_data_delta(&x, &x).unwrap(), vec![0; 16]);
        let y: Vec<u8> = (0..16).collect();
        assert_eq!(compute_data_delta(&[0; 16], &y).unwrap(), y);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<u8> = (0..100).map(|_| rng.gen()).collect();
        let b: Vec<u8> = (0..100).map(|_| rng.gen()).collect();
        let d = compute_data_delta(&a, &b).unwrap();
        for t in 0..100 {
            assert_eq!(d[t], a[t] ^ b[t]);
        }
        assert!(compute_data_delta(&a, &b[..3]).is_err());
    }

    fn delta(payload: Vec<u8>) -> DeltaRecord {
        DeltaRecord {
            stripe_id: 3,
            block_index: 1,
            offset: 512,
            payload,
        }
    }

    #[test]
    fn merge_same_extent() {
        let d = delta(vec![5; 8]);
        assert_eq!(merge_deltas_same_extent(&d, &d).unwrap().payload, vec![0; 8]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let versions: Vec<Vec<u8>> = (0..6).map(|_| (0..32).map(|_| rng.gen()).collect()).collect();
        let mut acc = delta(compute_data_delta(&versions[0], &versions[1]).unwrap());
        for w in versions[1..].windows(2) {
            acc = merge_deltas_same_extent(&acc, &delta(compute_data_delta(&w[0], &w[1]).unwrap()))
                .unwrap();
        }
        assert_eq!(acc.payload, compute_data_delta(&versions[0], &versions[5]).unwrap());

        let mut other = d.clone();
        other.offset = 0;
        assert!(merge_deltas_same_extent(&d, &other).is_err());
    }

    #[test]
    fn cross_block_combination() {
        let mat = CodingMatrix::cauchy(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d1: Vec<u8> = (0..48).map(|_| rng.gen()).collect();
        let d3: Vec<u8> = (0..48).map(|_| rng.gen()).collect();

        let single = combine_cross_block_deltas(&mat, 0, 0, &[(2, &d1)]).unwrap();
        for pd in &single {
            let expect = parity_delta_for(&mat, &delta_at(2, &d1), pd.parity_index);
            assert_eq!(pd.payload, expect.payload);
        }

        // Sparse re-encode oracle: zeros everywhere except blocks 1 and 3.
        let combined = combine_cross_block_deltas(&mat, 0, 0, &[(1, &d1), (3, &d3)]).unwrap();
        let mut sparse = vec![vec![0u8; 48]; 4];
        sparse[1] = d1.clone();
        sparse[3] = d3.clone();
        let expect = naive_encode(&mat, &sparse);
        for pd in &combined {
            assert_eq!(pd.payload, expect[pd.parity_index]);
        }

        assert_eq!(
            combine_cross_block_deltas(&mat, 0, 0, &[(1, &d1), (1, &d3)]),
            Err(CodecError::DuplicateBlock(1))
        );
        assert!(combine_cross_block_deltas(&mat, 0, 0, &[(1, &d1), (2, &d3[..4])]).is_err());
    }

    #[test]
    fn equal_coefficients_cancel() {
        let rows = vec![vec![GfElement(9), GfElement(9), GfElement(4)]];
        let mat = CodingMatrix::from_rows(rows).unwrap();
        let p = vec![0x33u8; 8];
        let out = combine_cross_block_deltas(&mat, 0, 0, &[(0, &p), (1, &p)]).unwrap();
        assert!(out[0].payload.iter().all(|&b| b == 0));
        let out = combine_cross_block_deltas(&mat, 0, 0, &[(0, &p), (2, &p)]).unwrap();
        assert!(out[0].payload.iter().any(|&b| b != 0));
    }

    fn delta_at(block: usize, payload: &[u8]) -> DeltaRecord {
        DeltaRecord {
            stripe_id: 0,
            block_index: block,
            offset: 0,
            payload: payload.to_vec(),
        }
    }

    #[test]
    fn parity_delta_application() {
        let mut parity = vec![0x11u8; 32];
        let orig = parity.clone();
        let zero = ParityDeltaRecord {
            stripe_id: 0,
            parity_index: 0,
            offset: 4,
            payload: vec![0; 8],
        };
        apply_parity_delta(&mut parity, &zero).unwrap();
        assert_eq!(parity, orig);
        let pd = ParityDeltaRecord {
            payload: (1..=8).collect(),
            ..zero.clone()
        };
        apply_parity_delta(&mut parity, &pd).unwrap();
        assert_ne!(parity, orig);
        assert_eq!(parity[..4], orig[..4]);
        assert_eq!(parity[12..], orig[12..]);
        apply_parity_delta(&mut parity, &pd).unwrap();
        assert_eq!(parity, orig);
        let bad = ParityDeltaRecord {
            offset: 30,
            ..pd
        };
        assert!(matches!(
            apply_parity_delta(&mut parity, &bad),
            Err(CodecError::OutOfRange { .. })
        ));
    }

    #[test]
    fn full_update_pipeline_rs32() {
        let mat = CodingMatrix::cauchy(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = random_blocks(&mut rng, 3, 64);
        let mut parity = naive_encode(&mat, &data);
        // Update blocks 0 and 2 over bytes [16, 40).
        let mut deltas = Vec::new();
        for &b in &[0usize, 2] {
            let new: Vec<u8> = (0..24).map(|_| rng.gen()).collect();
            let d = compute_data_delta(&data[b][16..40], &new).unwrap();
            data[b][16..40].copy_from_slice(&new);
            deltas.push((b, d));
        }
        let refs: Vec<(usize, &[u8])> = deltas.iter().map(|(b, d)| (*b, d.as_slice())).collect();
        for pd in combine_cross_block_deltas(&mat, 0, 16, &refs).unwrap() {
            apply_parity_delta(&mut parity[pd.parity_index], &pd).unwrap();
        }
        assert_eq!(parity, naive_encode(&mat, &data));
    }

    #[test]
    fn decode_cases() {
        let mat = CodingMatrix::cauchy(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let stripe = Stripe::encode(0, &mat, random_blocks(&mut rng, 4, 40)).unwrap();
            // Nothing lost.
            let all_data: Vec<(usize, &[u8])> = (0..4).map(|r| (r, stripe.block(r))).collect();
            assert!(decode_recover(&mat, &all_data, &[]).unwrap().is_empty());
            // Parity only: re-encode path.
            let out = decode_recover(&mat, &all_data, &[4, 5]).unwrap();
            assert_eq!(out[0].1, stripe.parity[0]);
            assert_eq!(out[1].1, stripe.parity[1]);
            // Lose data blocks 1 and 3 (zero-based).
            let surv: Vec<(usize, &[u8])> = [0, 2, 4, 5].iter().map(|&r| (r, stripe.block(r))).collect();
            let out = decode_recover(&mat, &surv, &[1, 3]).unwrap();
            assert_eq!(out[0], (1, stripe.data[1].clone()));
            assert_eq!(out[1], (3, stripe.data[3].clone()));
        }
    }

    #[test]
    fn decode_errors() {
        let mat = CodingMatrix::cauchy(2, 1).unwrap();
        let b = vec![0u8; 8];
        assert!(matches!(
            decode_recover(&mat, &[(0, &b), (2, &b)], &[1, 0]),
            Err(CodecError::TooManyLost { .. }) | Err(CodecError::Dimension(_))
        ));
        assert!(matches!(
            decode_recover(&mat, &[(0, &b)], &[1]),
            Err(CodecError::Dimension(_))
        ));
        let mat = CodingMatrix::cauchy(2, 2).unwrap();
        assert_eq!(
            decode_recover(&mat, &[(0, &b), (1, &b)], &[1, 2, 3]),
            Err(CodecError::TooManyLost { lost: 3, m: 2 })
        );
    }

    #[test]
    fn singular_survivors_detected() {
        let rows = vec![vec![GfElement(1), GfElement(1)], vec![GfElement(2), GfElement(2)]];
        let mat = CodingMatrix::from_rows(rows).unwrap();
        let b = vec![1u8; 4];
        assert_eq!(
            decode_recover(&mat, &[(2, &b), (3, &b)], &[0]),
            Err(CodecError::Singular)
        );
    }
}
