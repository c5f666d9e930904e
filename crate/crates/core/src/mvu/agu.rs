use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AGU_LEVELS: usize = 5;

/// Nested-loop address generator.
///
/// Level 0 is the innermost loop. Each step increments the innermost counter;
/// when a counter wraps the next level increments instead, and the address
/// moves by the jump of the outermost level that incremented. Unused levels
/// have a count of 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AguConfig {
    pub base: u32,
    pub counts: [u32; AGU_LEVELS],
    pub jumps: [i32; AGU_LEVELS],
}

impl Default for AguConfig {
    fn default() -> Self {
        AguConfig { base: 0, counts: [1; AGU_LEVELS], jumps: [0; AGU_LEVELS] }
    }
}

impl AguConfig {
    pub fn new(base: u32, loops: &[(u32, i32)]) -> Result<Self> {
        if loops.len() > AGU_LEVELS {
            return Err(Error::JobConfig(format!("{} AGU loops (max {AGU_LEVELS})", loops.len())));
        }
        let mut cfg = AguConfig { base, ..Default::default() };
        for (i, &(count, jump)) in loops.iter().enumerate() {
            cfg.counts[i] = count;
            cfg.jumps[i] = jump;
        }
        Ok(cfg)
    }

    /// Builds a nest that visits `base + sum(index[i] * strides[i])`.
    pub fn from_strides(base: u32, loops: &[(u32, i64)]) -> Result<Self> {
        let mut jumps = Vec::with_capacity(loops.len());
        let mut travel = 0i64;
        for &(count, stride) in loops {
            let jump = stride - travel;
            jumps.push((
                count,
                i32::try_from(jump).map_err(|_| Error::JobConfig(format!("AGU jump {jump} does not fit 32 bits")))?,
            ));
            travel += (count.max(1) as i64 - 1) * stride;
        }
        Self::new(base, &jumps)
    }

    /// Number of active (non-trivial) levels, at least 1.
    pub fn levels(&self) -> usize {
        self.counts.iter().rposition(|&c| c != 1).map_or(1, |i| i + 1)
    }

    pub fn len(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.contains(&0) {
            return Err(Error::JobConfig("AGU loop count of zero".into()));
        }
        Ok(())
    }
}

/// Expands an AGU nest into its address sequence, checking every address
/// against `depth`.
pub fn agu_sequence(cfg: &AguConfig, depth: usize) -> Result<Vec<u32>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.len() as usize);
    let mut idx = [0u32; AGU_LEVELS];
    let mut addr = cfg.base as i64;
    loop {
        if addr < 0 || addr as usize >= depth {
            return Err(Error::AddressOutOfRange { addr, depth });
        }
        out.push(addr as u32);
        let mut level = 0;
        loop {
            if level == AGU_LEVELS {
                return Ok(out);
            }
            idx[level] += 1;
            if idx[level] < cfg.counts[level] {
                addr += cfg.jumps[level] as i64;
                break;
            }
            idx[level] = 0;
            level += 1;
        }
    }
}
