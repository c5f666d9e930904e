use super::agu::agu_sequence;
use super::job::{JobDescriptor, JobShape};
use super::memory::MvuMemories;
use super::pipeline::{quantser_lanes, scaler_apply, PoolRelu};
use crate::bitserial::{adder_tree_sum, pair_steps, Accumulator, PairStep, LANES};
use crate::error::{Error, Result};

/// A word leaving QuantSer, addressed within the destination activation RAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Writeback {
    pub address: u32,
    pub word: u64,
}

/// What one MVP cycle produced.
#[derive(Debug, Clone, Default)]
pub struct CycleOutput {
    /// Completed MVP output vector (before the scaler), if any.
    pub mvp: Option<[i64; LANES]>,
    /// QuantSer words for a completed pool window.
    pub writes: Vec<Writeback>,
}

/// Cycle-stepped MVP with its downstream pipeline.
#[derive(Debug, Clone)]
pub struct MvpEngine {
    job: JobDescriptor,
    shape: JobShape,
    steps: Vec<PairStep>,
    act: Vec<u32>,
    wgt: Vec<u32>,
    scaler: Vec<u32>,
    bias: Vec<u32>,
    out: Vec<u32>,
    out_idx: usize,
    step_idx: usize,
    tile_idx: usize,
    acc: [Accumulator; LANES],
    pool: PoolRelu,
    emitted: usize,
    cycles: u64,
}

impl MvpEngine {
    pub fn new(job: JobDescriptor, mem: &MvuMemories) -> Result<Self> {
        let shape = job.shape()?;
        let act = agu_sequence(&job.agu_act, mem.activation.len() + 1 - job.prec_a.bits() as usize)
            .map_err(|e| widen(e, job.prec_a.bits()))?;
        let wgt = agu_sequence(&job.agu_wgt, mem.weight.len() + 1 - job.prec_w.bits() as usize)
            .map_err(|e| widen(e, job.prec_w.bits()))?;
        let (scaler, bias) = if job.scaler_enable {
            (agu_sequence(&job.agu_scaler, mem.scaler.len())?, agu_sequence(&job.agu_bias, mem.bias.len())?)
        } else {
            (vec![], vec![])
        };
        let out = agu_sequence(&job.agu_out, u32::MAX as usize)?;
        let depth = mem.activation.len();
        for &a in &out {
            let last = job.dest_base as u64 + a as u64 + job.quant_bits as u64 - 1;
            if last >= depth as u64 {
                return Err(Error::AddressOutOfRange { addr: last as i64, depth });
            }
        }
        Ok(MvpEngine {
            steps: pair_steps(job.prec_a, job.prec_w),
            pool: PoolRelu::new(job.pool_window, job.relu_enable),
            job,
            shape,
            act,
            wgt,
            scaler,
            bias,
            out,
            out_idx: 0,
            step_idx: 0,
            tile_idx: 0,
            acc: [Accumulator::default(); LANES],
            emitted: 0,
            cycles: 0,
        })
    }

    pub fn job(&self) -> &JobDescriptor {
        &self.job
    }

    pub fn done(&self) -> bool {
        self.out_idx as u64 == self.shape.outputs
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// One MVP cycle: one bit pair of one input tile for all 64 VVPs.
    pub fn step(&mut self, mem: &MvuMemories) -> Result<CycleOutput> {
        debug_assert!(!self.done());
        let reduce = self.shape.reduce_len as usize;
        let step = self.steps[self.step_idx];
        let n = self.out_idx * reduce + self.tile_idx;
        let a = mem.activation[(self.act[n] + step.act_plane as u32) as usize];
        let row = &mem.weight[(self.wgt[n] + step.wgt_plane as u32) as usize];
        let shift = step.shift_before && self.tile_idx == 0;
        for (acc, &w) in self.acc.iter_mut().zip(row.iter()) {
            if shift {
                acc.shift();
            }
            acc.add_term(adder_tree_sum(a, w), step.negate);
        }
        self.cycles += 1;

        self.tile_idx += 1;
        if self.tile_idx < reduce {
            return Ok(CycleOutput::default());
        }
        self.tile_idx = 0;
        self.step_idx += 1;
        if self.step_idx < self.steps.len() {
            return Ok(CycleOutput::default());
        }
        self.step_idx = 0;
        let mut v = [0i64; LANES];
        for (o, acc) in v.iter_mut().zip(self.acc.iter_mut()) {
            *o = acc.value;
            *acc = Accumulator::default();
        }
        let writes = self.pipeline(mem, &v)?;
        self.out_idx += 1;
        Ok(CycleOutput { mvp: Some(v), writes })
    }

    fn pipeline(&mut self, mem: &MvuMemories, v: &[i64; LANES]) -> Result<Vec<Writeback>> {
        let mut scaled = *v;
        if self.job.scaler_enable {
            let s = &mem.scaler[self.scaler[self.out_idx] as usize];
            let b = &mem.bias[self.bias[self.out_idx] as usize];
            for lane in 0..LANES {
                scaled[lane] = scaler_apply(v[lane], s[lane], b[lane])?;
            }
        }
        let Some(pooled) = self.pool.push(&scaled) else {
            return Ok(vec![]);
        };
        let words = quantser_lanes(&pooled, self.job.quant_msb, self.job.quant_bits)?;
        let base = self.job.dest_base + self.out[self.emitted];
        self.emitted += 1;
        Ok(words.into_iter().enumerate().map(|(p, word)| Writeback { address: base + p as u32, word }).collect())
    }
}

fn widen(e: Error, planes: u32) -> Error {
    match e {
        Error::AddressOutOfRange { addr, depth } => {
            Error::AddressOutOfRange { addr: addr + planes as i64 - 1, depth: depth + planes as usize - 1 }
        }
        e => e,
    }
}

/// Runs an MVP job to completion and returns its raw output vectors (before
/// the scaler) and the MVP cycle count.
pub fn run_mvp_job(mem: &MvuMemories, job: &JobDescriptor) -> Result<(Vec<[i64; LANES]>, u64)> {
    let mut engine = MvpEngine::new(*job, mem)?;
    let mut outs = Vec::with_capacity(engine.shape.outputs as usize);
    while !engine.done() {
        if let Some(v) = engine.step(mem)?.mvp {
            outs.push(v);
        }
    }
    Ok((outs, engine.cycles()))
}

/// Runs a full job (MVP and pipeline) and returns the QuantSer writes in order.
pub fn run_job(mem: &MvuMemories, job: &JobDescriptor) -> Result<(Vec<Writeback>, u64)> {
    let mut engine = MvpEngine::new(*job, mem)?;
    let mut writes = vec![];
    while !engine.done() {
        writes.extend(engine.step(mem)?.writes);
    }
    Ok((writes, engine.cycles()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitserial::{transpose, untranspose, Precision};
    use crate::mvu::agu::AguConfig;
    use crate::mvu::job::tests::tile_job;
    use crate::mvu::memory::MemoryConfig;
    use rand::{Rng, SeedableRng};

    fn p(bits: u32, signed: bool) -> Precision {
        Precision::new(bits, signed).unwrap()
    }

    /// Naive integer matrix-vector product.
    fn gemv_oracle(m: &[Vec<i64>], x: &[i64]) -> Vec<i64> {
        m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// Lays out an (rows x cols) matrix as tiles (out tile, in block, plane) and
    /// the vector as blocks (block, plane), then builds the matching job.
    fn gemv_setup(m: &[Vec<i64>], x: &[i64], pa: Precision, pw: Precision) -> (MvuMemories, JobDescriptor) {
        let (rows, cols) = (m.len(), m[0].len());
        let (to, ti) = (rows / 64, cols / 64);
        let mut mem = MvuMemories::new(&MemoryConfig::default());
        let xt = transpose(x, pa, 64).unwrap();
        mem.write_activation(0, &xt.planes).unwrap();
        let mut addr = 0;
        for o in 0..to {
            for i in 0..ti {
                let mut tile = vec![];
                for r in 0..64 {
                    tile.extend_from_slice(&m[o * 64 + r][i * 64..(i + 1) * 64]);
                }
                let t = transpose(&tile, pw, 4096).unwrap();
                for plane in t.planes.chunks(64) {
                    mem.weight[addr].copy_from_slice(plane);
                    addr += 1;
                }
            }
        }
        let (ba, bw) = (pa.bits() as i64, pw.bits() as i64);
        let mut job = tile_job(pa, pw);
        job.agu_act = AguConfig::from_strides(0, &[(ti as u32, ba), (to as u32, 0)]).unwrap();
        job.agu_wgt = AguConfig::from_strides(0, &[(ti as u32, bw), (to as u32, ti as i64 * bw)]).unwrap();
        job.agu_out = AguConfig::from_strides(0, &[(to as u32, 32)]).unwrap();
        job.quant_msb = 31;
        job.quant_bits = 32;
        job.countdown = (ti * to) as u32 * pa.bits() * pw.bits();
        (mem, job)
    }

    fn random_gemv(rng: &mut impl Rng, rows: usize, cols: usize, pa: Precision, pw: Precision) {
        let m: Vec<Vec<i64>> =
            (0..rows).map(|_| (0..cols).map(|_| rng.random_range(pw.min_value()..=pw.max_value())).collect()).collect();
        let x: Vec<i64> = (0..cols).map(|_| rng.random_range(pa.min_value()..=pa.max_value())).collect();
        let (mem, job) = gemv_setup(&m, &x, pa, pw);
        let (outs, cycles) = run_mvp_job(&mem, &job).unwrap();
        let got: Vec<i64> = outs.iter().flatten().copied().collect();
        assert_eq!(got, gemv_oracle(&m, &x));
        assert_eq!(cycles, ((rows / 64) * (cols / 64)) as u64 * (pa.bits() * pw.bits()) as u64);

        // the 32-bit QuantSer window reproduces the values in RAM
        let (writes, _) = run_job(&mem, &job).unwrap();
        let words: Vec<u64> = writes.iter().map(|w| w.word).collect();
        let back = untranspose(&crate::bitserial::BitTransposedTensor {
            shape: vec![rows],
            precision: p(16, true),
            block_width: 64,
            planes: words.chunks(32).flat_map(|c| c[16..].to_vec()).collect(),
        })
        .unwrap();
        let expect: Vec<i64> = gemv_oracle(&m, &x).iter().map(|&v| (v as i16) as i64).collect();
        assert_eq!(back, expect);
    }

    #[test]
    fn identity_tile_one_bit() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(20);
        let m: Vec<Vec<i64>> = (0..64).map(|r| (0..64).map(|c| (r == c) as i64).collect()).collect();
        let x: Vec<i64> = (0..64).map(|_| rng.random_range(0..2)).collect();
        let (mem, job) = gemv_setup(&m, &x, p(1, false), p(1, false));
        let (outs, cycles) = run_mvp_job(&mem, &job).unwrap();
        assert_eq!(cycles, 1);
        assert_eq!(outs[0].to_vec(), x);
    }

    #[test]
    fn one_tile_two_bit() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(21);
        for (sa, sw) in [(false, false), (false, true), (true, true)] {
            random_gemv(&mut rng, 64, 64, p(2, sa), p(2, sw));
        }
    }

    #[test]
    fn two_by_two_tiles() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(22);
        random_gemv(&mut rng, 128, 128, p(2, false), p(2, true));
        random_gemv(&mut rng, 192, 128, p(3, true), p(5, true));
    }

    #[test]
    fn tile_cost_law() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(23);
        for ba in 1..=8 {
            for bw in 1..=8 {
                random_gemv(&mut rng, 64, 64, p(ba, false), p(bw, true));
            }
        }
    }

    #[test]
    fn out_of_range_job() {
        let pa = p(2, false);
        let mem = MvuMemories::new(&MemoryConfig { activation_depth: 4, ..Default::default() });
        let mut job = tile_job(pa, pa);
        job.dest_base = 0;
        job.quant_bits = 2;
        job.agu_act.base = 3;
        assert!(matches!(MvpEngine::new(job, &mem), Err(Error::AddressOutOfRange { .. })));
    }

    #[test]
    fn scaler_overflow_surfaces() {
        let pa = p(1, false);
        let mut mem = MvuMemories::new(&MemoryConfig::default());
        mem.activation[0] = u64::MAX;
        mem.weight[0] = [u64::MAX; 64];
        mem.scaler[0] = [u16::MAX; 64];
        mem.bias[0] = [i32::MAX; 64];
        let mut job = tile_job(pa, pa);
        job.scaler_enable = true;
        job.quant_msb = 31;
        job.quant_bits = 1;
        assert!(matches!(run_job(&mem, &job), Err(Error::QuantOverflow(_))));
    }
}
