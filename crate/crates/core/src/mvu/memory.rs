use serde::{Deserialize, Serialize};

use crate::bitserial::LANES;
use crate::error::{Error, Result};

/// One 4096-bit weight row: word `r` feeds VVP `r`, bit `l` is input lane `l`.
pub type WeightRow = [u64; LANES];
pub type ScalerRow = [u16; LANES];
pub type BiasRow = [i32; LANES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub activation_depth: usize,
    pub weight_depth: usize,
    pub scaler_depth: usize,
    pub bias_depth: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig { activation_depth: 1 << 15, weight_depth: 1 << 11, scaler_depth: 256, bias_depth: 256 }
    }
}

#[derive(Debug, Clone)]
pub struct MvuMemories {
    pub activation: Vec<u64>,
    pub weight: Vec<WeightRow>,
    pub scaler: Vec<ScalerRow>,
    pub bias: Vec<BiasRow>,
}

impl MvuMemories {
    pub fn new(cfg: &MemoryConfig) -> Self {
        MvuMemories {
            activation: vec![0; cfg.activation_depth],
            weight: vec![[0; LANES]; cfg.weight_depth],
            scaler: vec![[0; LANES]; cfg.scaler_depth],
            bias: vec![[0; LANES]; cfg.bias_depth],
        }
    }

    pub fn write_activation(&mut self, addr: usize, words: &[u64]) -> Result<()> {
        copy_into(&mut self.activation, addr, words)
    }

    pub fn read_activation(&self, addr: usize, len: usize) -> Result<&[u64]> {
        let depth = self.activation.len();
        self.activation.get(addr..addr + len).ok_or(Error::AddressOutOfRange { addr: (addr + len) as i64, depth })
    }

    pub fn load_weights(&mut self, addr: usize, rows: &[WeightRow]) -> Result<()> {
        copy_into(&mut self.weight, addr, rows)
    }

    pub fn load_scaler(&mut self, addr: usize, rows: &[ScalerRow]) -> Result<()> {
        copy_into(&mut self.scaler, addr, rows)
    }

    pub fn load_bias(&mut self, addr: usize, rows: &[BiasRow]) -> Result<()> {
        copy_into(&mut self.bias, addr, rows)
    }
}

fn copy_into<T: Copy>(ram: &mut [T], addr: usize, src: &[T]) -> Result<()> {
    let depth = ram.len();
    let dst = ram
        .get_mut(addr..addr + src.len())
        .ok_or(Error::AddressOutOfRange { addr: (addr + src.len()) as i64, depth })?;
    dst.copy_from_slice(src);
    Ok(())
}
