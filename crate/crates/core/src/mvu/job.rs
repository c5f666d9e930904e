use serde::{Deserialize, Serialize};

use super::agu::AguConfig;
use super::pipeline::check_quant_window;
use crate::bitserial::Precision;
use crate::error::{Error, Result};

/// Complete configuration of one MVU job.
///
/// The activation and weight AGUs run one step per MVP cycle. Their innermost
/// `reduce_depth` levels enumerate the input tiles that reduce into a single
/// output vector; that inner nest is replayed once per bit pair of the
/// schedule. The outer levels step from one output vector to the next. The
/// scaler and bias AGUs step once per MVP output vector and the output AGU
/// once per vector leaving the Pool/ReLU unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobDescriptor {
    pub prec_a: Precision,
    pub prec_w: Precision,
    pub agu_act: AguConfig,
    pub agu_wgt: AguConfig,
    pub agu_scaler: AguConfig,
    pub agu_bias: AguConfig,
    pub agu_out: AguConfig,
    pub reduce_depth: u32,
    pub countdown: u32,
    pub scaler_enable: bool,
    /// Pooling window length in output vectors; 1 disables pooling.
    pub pool_window: u32,
    pub relu_enable: bool,
    pub quant_msb: u32,
    pub quant_bits: u32,
    pub dest_mask: u8,
    pub dest_base: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobShape {
    /// Input tiles reduced into one output vector.
    pub reduce_len: u64,
    /// MVP output vectors.
    pub outputs: u64,
    /// Vectors leaving the pool unit.
    pub emitted: u64,
}

impl JobDescriptor {
    pub fn shape(&self) -> Result<JobShape> {
        self.agu_act.validate()?;
        self.agu_wgt.validate()?;
        self.agu_out.validate()?;
        let depth = self.reduce_depth as usize;
        if !(1..=5).contains(&depth) {
            return Err(Error::JobConfig(format!("reduce depth {depth} not in 1..=5")));
        }
        let reduce = |a: &AguConfig| a.counts[..depth].iter().map(|&c| c as u64).product::<u64>();
        let reduce_len = reduce(&self.agu_act);
        if reduce_len != reduce(&self.agu_wgt) || self.agu_act.len() != self.agu_wgt.len() {
            return Err(Error::JobConfig(format!(
                "activation nest {:?} and weight nest {:?} disagree",
                self.agu_act.counts, self.agu_wgt.counts
            )));
        }
        let outputs = self.agu_act.len() / reduce_len;
        let cycles = self.agu_act.len() * self.prec_a.bits() as u64 * self.prec_w.bits() as u64;
        if cycles != self.countdown as u64 {
            return Err(Error::JobConfig(format!("countdown {} but the nest needs {cycles} cycles", self.countdown)));
        }
        if self.scaler_enable {
            self.agu_scaler.validate()?;
            self.agu_bias.validate()?;
            if self.agu_scaler.len() != outputs || self.agu_bias.len() != outputs {
                return Err(Error::JobConfig("scaler/bias nests do not match output count".into()));
            }
        }
        if self.pool_window == 0 || !outputs.is_multiple_of(self.pool_window as u64) {
            return Err(Error::JobConfig(format!(
                "{outputs} outputs not divisible by pool window {}",
                self.pool_window
            )));
        }
        let emitted = outputs / self.pool_window as u64;
        if self.agu_out.len() != emitted {
            return Err(Error::JobConfig(format!(
                "output nest has {} entries for {emitted} vectors",
                self.agu_out.len()
            )));
        }
        check_quant_window(self.quant_msb, self.quant_bits)?;
        if self.dest_mask == 0 {
            return Err(Error::JobConfig("empty destination mask".into()));
        }
        for (agu, prec) in [(&self.agu_act, self.prec_a), (&self.agu_wgt, self.prec_w)] {
            let b = prec.bits() as i32;
            if agu.counts[0] > 1 && agu.jumps[0] % b != 0 {
                return Err(Error::PrecisionMismatch(format!(
                    "inner jump {} does not step whole {}-plane blocks",
                    agu.jumps[0], b
                )));
            }
        }
        Ok(JobShape { reduce_len, outputs, emitted })
    }
}
