use serde::{Deserialize, Serialize};

use super::Precision;
use crate::error::{Error, Result};

/// A tensor stored as bit planes.
///
/// Elements are grouped in blocks of `block_width`. Each block occupies
/// `precision.bits()` planes, MSB plane first; a plane is `block_width` bits
/// wide and is stored as `ceil(block_width / 64)` little-endian `u64` words,
/// with element `l` of the block at bit `l % 64` of word `l / 64`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitTransposedTensor {
    pub shape: Vec<usize>,
    pub precision: Precision,
    pub block_width: usize,
    pub planes: Vec<u64>,
}

impl BitTransposedTensor {
    pub fn words_per_plane(&self) -> usize {
        self.block_width.div_ceil(64)
    }

    pub fn words_per_block(&self) -> usize {
        self.words_per_plane() * self.precision.bits() as usize
    }

    pub fn num_blocks(&self) -> usize {
        self.planes.len() / self.words_per_block().max(1)
    }

    /// Words of block `b`, MSB plane first.
    pub fn block(&self, b: usize) -> &[u64] {
        let n = self.words_per_block();
        &self.planes[b * n..(b + 1) * n]
    }

    /// Plane `p` of block `b`, where `p == 0` is the MSB plane.
    pub fn plane(&self, b: usize, p: usize) -> &[u64] {
        let wpp = self.words_per_plane();
        &self.block(b)[p * wpp..(p + 1) * wpp]
    }

    fn validate(&self) -> Result<()> {
        if self.block_width == 0 {
            return Err(Error::MalformedTensor("zero block width".into()));
        }
        let n = self.words_per_block();
        if !self.planes.len().is_multiple_of(n) {
            return Err(Error::MalformedTensor(format!(
                "{} words is not a whole number of {}-word blocks ({} planes of {} bits)",
                self.planes.len(),
                n,
                self.precision.bits(),
                self.block_width
            )));
        }
        let tail = self.block_width % 64;
        if tail != 0 {
            let mask = !((1u64 << tail) - 1);
            let wpp = self.words_per_plane();
            for (i, w) in self.planes.iter().enumerate() {
                if i % wpp == wpp - 1 && w & mask != 0 {
                    return Err(Error::MalformedTensor("bits set beyond block width".into()));
                }
            }
        }
        Ok(())
    }
}

/// Packs `elements` into bit planes. The caller pads `elements` to a multiple of
/// `block_width`.
pub fn transpose(elements: &[i64], precision: Precision, block_width: usize) -> Result<BitTransposedTensor> {
    if block_width == 0 || !elements.len().is_multiple_of(block_width) {
        return Err(Error::MalformedTensor(format!(
            "{} elements is not a multiple of block width {block_width}",
            elements.len()
        )));
    }
    let bits = precision.bits() as usize;
    let wpp = block_width.div_ceil(64);
    let blocks = elements.len() / block_width;
    let mut planes = vec![0u64; blocks * bits * wpp];
    for (b, chunk) in elements.chunks(block_width).enumerate() {
        let block = &mut planes[b * bits * wpp..(b + 1) * bits * wpp];
        for (l, &v) in chunk.iter().enumerate() {
            precision.check(v)?;
            let raw = precision.encode(v);
            for p in 0..bits {
                // plane 0 holds bit position bits-1
                if raw >> (bits - 1 - p) & 1 == 1 {
                    block[p * wpp + l / 64] |= 1u64 << (l % 64);
                }
            }
        }
    }
    Ok(BitTransposedTensor { shape: vec![elements.len()], precision, block_width, planes })
}

/// Inverse of [`transpose`].
pub fn untranspose(t: &BitTransposedTensor) -> Result<Vec<i64>> {
    t.validate()?;
    let bits = t.precision.bits() as usize;
    let wpp = t.words_per_plane();
    let mut out = Vec::with_capacity(t.num_blocks() * t.block_width);
    for b in 0..t.num_blocks() {
        let block = t.block(b);
        for l in 0..t.block_width {
            let mut raw = 0u32;
            for p in 0..bits {
                raw = raw << 1 | (block[p * wpp + l / 64] >> (l % 64) & 1) as u32;
            }
            out.push(t.precision.decode(raw));
        }
    }
    Ok(out)
}
