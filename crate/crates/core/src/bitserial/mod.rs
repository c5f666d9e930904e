//! Exact integer semantics of the bit-serial datapath.
//!
//! Values are fixed-point integers of 1 to 16 bits, either unsigned or two's
//! complement. Tensors live in RAM as bit planes (one word per bit position,
//! most significant plane first) and dot products are evaluated one bit pair
//! at a time, highest order of magnitude first.

mod dot;
mod tensor;

pub use dot::{adder_tree_sum, bit_combination_schedule, bitserial_dot, dot_planes, pair_steps, Accumulator, PairStep};
pub use tensor::{transpose, untranspose, BitTransposedTensor};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of lanes in one VVP and one activation word.
pub const LANES: usize = 64;

/// Bit width and signedness of a fixed-point operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPrecision", into = "RawPrecision")]
pub struct Precision {
    bits: u8,
    signed: bool,
}

#[derive(Serialize, Deserialize)]
struct RawPrecision {
    bits: u32,
    #[serde(default)]
    signed: bool,
}

impl TryFrom<RawPrecision> for Precision {
    type Error = Error;

    fn try_from(raw: RawPrecision) -> Result<Self> {
        Precision::new(raw.bits, raw.signed)
    }
}

impl From<Precision> for RawPrecision {
    fn from(p: Precision) -> Self {
        RawPrecision { bits: p.bits as u32, signed: p.signed }
    }
}

impl Precision {
    pub const MAX_BITS: u32 = 16;

    pub fn new(bits: u32, signed: bool) -> Result<Self> {
        if !(1..=Self::MAX_BITS).contains(&bits) {
            return Err(Error::BadPrecision { bits });
        }
        Ok(Precision { bits: bits as u8, signed })
    }

    pub fn unsigned(bits: u32) -> Result<Self> {
        Self::new(bits, false)
    }

    pub fn signed(bits: u32) -> Result<Self> {
        Self::new(bits, true)
    }

    pub fn bits(self) -> u32 {
        self.bits as u32
    }

    pub fn is_signed(self) -> bool {
        self.signed
    }

    pub fn min_value(self) -> i64 {
        if self.signed {
            -(1i64 << (self.bits - 1))
        } else {
            0
        }
    }

    pub fn max_value(self) -> i64 {
        if self.signed {
            (1i64 << (self.bits - 1)) - 1
        } else {
            (1i64 << self.bits) - 1
        }
    }

    pub fn contains(self, v: i64) -> bool {
        v >= self.min_value() && v <= self.max_value()
    }

    pub fn check(self, v: i64) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::OutOfRange { value: v, precision: self })
        }
    }

    /// Raw bit pattern of `v` in this precision (two's complement when signed).
    pub fn encode(self, v: i64) -> u32 {
        (v as u32) & self.mask()
    }

    /// Inverse of [`Precision::encode`].
    pub fn decode(self, raw: u32) -> i64 {
        let raw = raw & self.mask();
        if self.signed && raw >> (self.bits - 1) & 1 == 1 {
            raw as i64 - (1i64 << self.bits)
        } else {
            raw as i64
        }
    }

    fn mask(self) -> u32 {
        ((1u64 << self.bits) - 1) as u32
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", if self.signed { 's' } else { 'u' }, self.bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        let s3 = Precision::signed(3).unwrap();
        assert_eq!((s3.min_value(), s3.max_value()), (-4, 3));
        let u16p = Precision::unsigned(16).unwrap();
        assert_eq!((u16p.min_value(), u16p.max_value()), (0, 65535));
        assert!(Precision::new(0, false).is_err());
        assert!(Precision::new(17, true).is_err());
    }

    #[test]
    fn encode_decode() {
        let s4 = Precision::signed(4).unwrap();
        for v in -8..8 {
            assert_eq!(s4.decode(s4.encode(v)), v);
        }
        assert_eq!(s4.encode(-1), 0b1111);
    }

    #[test]
    fn serde_validates() {
        let p: Precision = serde_json::from_str(r#"{"bits":4,"signed":true}"#).unwrap();
        assert_eq!(p, Precision::signed(4).unwrap());
        assert!(serde_json::from_str::<Precision>(r#"{"bits":0}"#).is_err());
    }
}
