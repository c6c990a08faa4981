//! GF(2^8) arithmetic over the reduction polynomial x^8 + x^4 + x^3 + x^2 + 1.
//!
//! Addition is XOR. Multiplication goes through log/antilog tables built at
//! compile time, plus a full 64 KiB product table used by the bulk kernels.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Sub};

/// Low byte of the reduction polynomial 0x11D.
pub const POLY: u16 = 0x1D;

const fn build_exp() -> [u8; 512] {
    let mut table = [0u8; 512];
    let mut val: u16 = 1;
    let mut i = 0;
    while i < 255 {
        table[i] = val as u8;
        table[i + 255] = val as u8;
        val <<= 1;
        if val & 0x100 != 0 {
            val ^= 0x100 | POLY;
        }
        i += 1;
    }
    table[510] = table[0];
    table[511] = table[1];
    table
}

const fn build_log() -> [u8; 256] {
    let exp = build_exp();
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 255 {
        table[exp[i] as usize] = i as u8;
        i += 1;
    }
    table
}

static EXP: [u8; 512] = build_exp();
static LOG: [u8; 256] = build_log();

fn build_mul_table() -> Box<[[u8; 256]; 256]> {
    let mut table = Box::new([[0u8; 256]; 256]);
    for a in 1..256usize {
        for b in 1..256usize {
            table[a][b] = EXP[LOG[a] as usize + LOG[b] as usize];
        }
    }
    table
}

fn mul_table() -> &'static [[u8; 256]; 256] {
    static TABLE: std::sync::OnceLock<Box<[[u8; 256]; 256]>> = std::sync::OnceLock::new();
    TABLE.get_or_init(build_mul_table)
}

/// Product row for a fixed coefficient: `row[x] = c * x`.
pub fn mul_row(c: u8) -> &'static [u8; 256] {
    &mul_table()[c as usize]
}

/// One element of GF(2^8).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
#[repr(transparent)]
pub struct GfElement(pub u8);

impl GfElement {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    #[inline]
    pub const fn value(self) -> u8 {
        self.0
    }

    #[inline]
    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Multiplicative inverse, `None` for zero.
    pub fn inverse(self) -> Option<Self> {
        if self.0 == 0 {
            None
        } else {
            Some(Self(EXP[255 - LOG[self.0 as usize] as usize]))
        }
    }
}

impl fmt::Debug for GfElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf({:#04x})", self.0)
    }
}

impl From<u8> for GfElement {
    fn from(v: u8) -> Self {
        Self(v)
    }
}

/// Field product.
#[inline]
pub fn gf_mul(a: GfElement, b: GfElement) -> GfElement {
    if a.0 == 0 || b.0 == 0 {
        GfElement::ZERO
    } else {
        GfElement(EXP[LOG[a.0 as usize] as usize + LOG[b.0 as usize] as usize])
    }
}

#[inline]
pub fn gf_add(a: GfElement, b: GfElement) -> GfElement {
    GfElement(a.0 ^ b.0)
}

impl Add for GfElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        gf_add(self, rhs)
    }
}

impl AddAssign for GfElement {
    fn add_assign(&mut self, rhs: Self) {
        self.0 ^= rhs.0;
    }
}

impl Sub for GfElement {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        gf_add(self, rhs)
    }
}

impl Mul for GfElement {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        gf_mul(self, rhs)
    }
}

impl MulAssign for GfElement {
    fn mul_assign(&mut self, rhs: Self) {
        *self = gf_mul(*self, rhs);
    }
}

impl Div for GfElement {
    type Output = Self;
    /// Panics on division by zero.
    fn div(self, rhs: Self) -> Self {
        gf_mul(self, rhs.inverse().expect("division by zero in GF(2^8)"))
    }
}

/// `dst[i] ^= c * src[i]`.
pub fn mul_acc(dst: &mut [u8], c: GfElement, src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    match c.0 {
        0 => {}
        1 => xor_into(dst, src),
        _ => {
            let row = mul_row(c.0);
            for (d, s) in dst.iter_mut().zip(src) {
                *d ^= row[*s as usize];
            }
        }
    }
}

/// `dst[i] = c * src[i]`.
pub fn mul_into(dst: &mut [u8], c: GfElement, src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    let row = mul_row(c.0);
    for (d, s) in dst.iter_mut().zip(src) {
        *d = row[*s as usize];
    }
}

/// `dst[i] ^= src[i]`.
pub fn xor_into(dst: &mut [u8], src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Carry-less multiply followed by reduction, one bit at a time.
    fn shift_and_reduce(a: u8, b: u8) -> u8 {
        let mut acc: u16 = 0;
        for bit in 0..8 {
            if b & (1 << bit) != 0 {
                acc ^= (a as u16) << bit;
            }
        }
        for bit in (8..16).rev() {
            if acc & (1 << bit) != 0 {
                acc ^= 0x11D << (bit - 8);
            }
        }
        acc as u8
    }

    #[test]
    fn known_products() {
        assert_eq!(gf_mul(GfElement(1), GfElement(0x57)), GfElement(0x57));
        assert_eq!(gf_mul(GfElement(0), GfElement(0xFF)), GfElement(0));
        assert_eq!(shift_and_reduce(0x02, 0x80), 0x1D);
        assert_eq!(gf_mul(GfElement(0x02), GfElement(0x80)), GfElement(0x1D));
    }

    #[test]
    fn table_matches_oracle_everywhere() {
        for a in 0..=255u8 {
            let row = mul_row(a);
            for b in 0..=255u8 {
                let expect = shift_and_reduce(a, b);
                assert_eq!(gf_mul(GfElement(a), GfElement(b)).0, expect, "{a} * {b}");
                assert_eq!(row[b as usize], expect);
            }
        }
    }

    #[test]
    fn inverses() {
        assert_eq!(GfElement(0).inverse(), None);
        for a in 1..=255u8 {
            let inv = GfElement(a).inverse().unwrap();
            assert_eq!(gf_mul(GfElement(a), inv), GfElement::ONE);
        }
    }

    #[test]
    fn bulk_kernels() {
        let src: Vec<u8> = (0..=255).collect();
        let mut dst = vec![0u8; 256];
        mul_acc(&mut dst, GfElement(7), &src);
        for (i, d) in dst.iter().enumerate() {
            assert_eq!(*d, shift_and_reduce(7, i as u8));
        }
        mul_acc(&mut dst, GfElement(7), &src);
        assert!(dst.iter().all(|&b| b == 0));
        mul_into(&mut dst, GfElement(1), &src);
        assert_eq!(dst, src);
    }
}
