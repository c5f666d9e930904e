//! Post-MVP pipeline modules: Scaler, Pool/ReLU and QuantSer.

use crate::bitserial::LANES;
use crate::error::{Error, Result};

pub const MVP_OUTPUT_BITS: u32 = 27;

fn fits_signed(v: i64, bits: u32) -> bool {
    let lim = 1i64 << (bits - 1);
    (-lim..lim).contains(&v)
}

/// `v * scale + bias` on the 27x16 multiplier and 32-bit bias adder.
pub fn scaler_apply(v: i64, scale: u16, bias: i32) -> Result<i64> {
    if !fits_signed(v, MVP_OUTPUT_BITS) {
        return Err(Error::MvpOverflow(v));
    }
    Ok(v * scale as i64 + bias as i64)
}

/// Comparator with an internal register. With ReLU the register starts at 0.
#[derive(Debug, Clone, Copy)]
pub struct PoolRelu {
    window: u32,
    relu: bool,
    filled: u32,
    reg: [i64; LANES],
}

impl PoolRelu {
    pub fn new(window: u32, relu: bool) -> Self {
        PoolRelu { window: window.max(1), relu, filled: 0, reg: [0; LANES] }
    }

    /// Feeds one vector; returns the window result once the window is complete.
    pub fn push(&mut self, v: &[i64; LANES]) -> Option<[i64; LANES]> {
        if self.filled == 0 {
            self.reg = [if self.relu { 0 } else { i64::MIN }; LANES];
        }
        for (r, &x) in self.reg.iter_mut().zip(v) {
            *r = (*r).max(x);
        }
        self.filled += 1;
        if self.filled == self.window {
            self.filled = 0;
            Some(self.reg)
        } else {
            None
        }
    }
}

/// Scalar view of the Pool/ReLU unit over a stream whose windows arrive
/// consecutively.
pub fn pool_relu(stream: &[i64], window: usize, relu: bool) -> Result<Vec<i64>> {
    if window == 0 || !stream.len().is_multiple_of(window) {
        return Err(Error::BadWindow { len: stream.len(), window });
    }
    Ok(stream.chunks(window).map(|w| w.iter().copied().fold(if relu { 0 } else { i64::MIN }, i64::max)).collect())
}

pub fn check_quant_window(msb: u32, bits: u32) -> Result<()> {
    if msb > 31 || bits == 0 || bits > msb + 1 {
        return Err(Error::BadQuantWindow { msb, bits });
    }
    Ok(())
}

/// Bits `msb ..= msb - out_bits + 1` of `v`, MSB first.
pub fn quantser(v: i32, msb: u32, out_bits: u32) -> Result<Vec<bool>> {
    check_quant_window(msb, out_bits)?;
    Ok((0..out_bits).map(|i| (v >> (msb - i)) & 1 == 1).collect())
}

/// QuantSer across all 64 data paths: one word per emitted bit position,
/// lane `l` at bit `l`, MSB plane first.
pub fn quantser_lanes(values: &[i64; LANES], msb: u32, out_bits: u32) -> Result<Vec<u64>> {
    check_quant_window(msb, out_bits)?;
    let mut words = vec![0u64; out_bits as usize];
    for (lane, &v) in values.iter().enumerate() {
        let v = i32::try_from(v).map_err(|_| Error::QuantOverflow(v))?;
        for (i, w) in words.iter_mut().enumerate() {
            if (v >> (msb - i as u32)) & 1 == 1 {
                *w |= 1u64 << lane;
            }
        }
    }
    Ok(words)
}
