//! Control and status registers: the machine-mode subset and the per-hart MVU
//! job registers.

use std::sync::OnceLock;

use crate::bitserial::Precision;
use crate::error::{Error, Result};
use crate::mvu::{AguConfig, JobDescriptor, AGU_LEVELS};

pub const MSTATUS: u16 = 0x300;
pub const MIE: u16 = 0x304;
pub const MTVEC: u16 = 0x305;
pub const MSCRATCH: u16 = 0x340;
pub const MEPC: u16 = 0x341;
pub const MCAUSE: u16 = 0x342;
pub const MIP: u16 = 0x344;
pub const MCYCLE: u16 = 0xb00;
pub const MINSTRET: u16 = 0xb02;
pub const MCYCLEH: u16 = 0xb80;
pub const MINSTRETH: u16 = 0xb82;
pub const MHARTID: u16 = 0xf14;

pub const MSTATUS_MIE: u32 = 1 << 3;
pub const MSTATUS_MPIE: u32 = 1 << 7;
/// Interrupt line of the hart's MVU in `mie`/`mip`.
pub const MVU_IRQ_BIT: u32 = 1 << 16;
pub const MCAUSE_MVU_IRQ: u32 = 0x8000_0010;

pub const MVU_CSR_BASE: u16 = 0x800;
pub const MVU_CSR_COUNT: usize = 74;

// Offsets from MVU_CSR_BASE.
pub const PREC_A: usize = 0;
pub const PREC_W: usize = 1;
pub const COUNTDOWN: usize = 2;
pub const REDUCE_DEPTH: usize = 3;
pub const SCALER_EN: usize = 4;
pub const POOL_WINDOW: usize = 5;
pub const RELU_EN: usize = 6;
pub const QUANT_MSB: usize = 7;
pub const QUANT_BITS: usize = 8;
pub const DEST_MASK: usize = 9;
pub const DEST_BASE: usize = 10;
pub const AGU_ACT: usize = 11;
pub const AGU_WGT: usize = 22;
pub const AGU_SCALER: usize = 33;
pub const AGU_BIAS: usize = 44;
pub const AGU_OUT: usize = 55;
/// Registers per AGU: base, counts, jumps.
pub const AGU_REGS: usize = 1 + 2 * AGU_LEVELS;
pub const START: usize = 66;
pub const STATUS: usize = 67;
pub const IRQ: usize = 68;
pub const MVP_CYCLES: usize = 69;

const AGUS: [(usize, &str); 5] =
    [(AGU_ACT, "act"), (AGU_WGT, "wgt"), (AGU_SCALER, "scl"), (AGU_BIAS, "bias"), (AGU_OUT, "out")];

const STANDARD: [(u16, &str); 12] = [
    (MSTATUS, "mstatus"),
    (MIE, "mie"),
    (MTVEC, "mtvec"),
    (MSCRATCH, "mscratch"),
    (MEPC, "mepc"),
    (MCAUSE, "mcause"),
    (MIP, "mip"),
    (MCYCLE, "mcycle"),
    (MINSTRET, "minstret"),
    (MCYCLEH, "mcycleh"),
    (MINSTRETH, "minstreth"),
    (MHARTID, "mhartid"),
];

fn mvu_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut n: Vec<String> = [
            "prec_a",
            "prec_w",
            "countdown",
            "reduce_depth",
            "scaler_en",
            "pool_window",
            "relu_en",
            "quant_msb",
            "quant_bits",
            "dest_mask",
            "dest_base",
        ]
        .iter()
        .map(|s| format!("mvu_{s}"))
        .collect();
        for (_, agu) in AGUS {
            n.push(format!("mvu_{agu}_base"));
            for l in 0..AGU_LEVELS {
                n.push(format!("mvu_{agu}_count{l}"));
            }
            for l in 0..AGU_LEVELS {
                n.push(format!("mvu_{agu}_jump{l}"));
            }
        }
        for s in ["start", "status", "irq", "mvp_cycles"] {
            n.push(format!("mvu_{s}"));
        }
        for r in 0..MVU_CSR_COUNT - n.len() {
            n.push(format!("mvu_reserved{r}"));
        }
        n
    })
}

pub fn csr_name(addr: u16) -> Option<&'static str> {
    if let Some((_, n)) = STANDARD.iter().find(|(a, _)| *a == addr) {
        return Some(n);
    }
    let off = addr.checked_sub(MVU_CSR_BASE)? as usize;
    mvu_names().get(off).map(String::as_str)
}

pub fn csr_address(name: &str) -> Option<u16> {
    if let Some((a, _)) = STANDARD.iter().find(|(_, n)| *n == name) {
        return Some(*a);
    }
    mvu_names().iter().position(|n| n == name).map(|i| MVU_CSR_BASE + i as u16)
}

/// `(offset, name)` for every MVU register, in address order.
pub fn mvu_csr_table() -> Vec<(u16, &'static str)> {
    mvu_names().iter().enumerate().map(|(i, n)| (MVU_CSR_BASE + i as u16, n.as_str())).collect()
}

pub fn encode_precision(p: Precision) -> u32 {
    p.bits() | (p.is_signed() as u32) << 8
}

pub fn decode_precision(v: u32) -> Result<Precision> {
    Precision::new(v & 0xff, v >> 8 & 1 == 1)
}

/// Backing store of the MVU job registers for one hart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvuCsrs(pub [u32; MVU_CSR_COUNT]);

impl Default for MvuCsrs {
    fn default() -> Self {
        let mut r = [0; MVU_CSR_COUNT];
        for (base, _) in AGUS {
            r[base + 1..base + 1 + AGU_LEVELS].fill(1);
        }
        r[POOL_WINDOW] = 1;
        MvuCsrs(r)
    }
}

fn agu_from(regs: &[u32]) -> AguConfig {
    let mut cfg = AguConfig { base: regs[0], ..AguConfig::default() };
    for l in 0..AGU_LEVELS {
        cfg.counts[l] = regs[1 + l];
        cfg.jumps[l] = regs[1 + AGU_LEVELS + l] as i32;
    }
    cfg
}

fn agu_into(cfg: &AguConfig, regs: &mut [u32]) {
    regs[0] = cfg.base;
    for l in 0..AGU_LEVELS {
        regs[1 + l] = cfg.counts[l];
        regs[1 + AGU_LEVELS + l] = cfg.jumps[l] as u32;
    }
}

impl MvuCsrs {
    /// The descriptor latched by a write to `mvu_start`.
    pub fn descriptor(&self) -> Result<JobDescriptor> {
        let r = &self.0;
        let agu = |base: usize| agu_from(&r[base..base + AGU_REGS]);
        let prec = |v: u32, which: &str| {
            decode_precision(v).map_err(|_| Error::JobConfig(format!("{which} register holds {v:#x}")))
        };
        Ok(JobDescriptor {
            prec_a: prec(r[PREC_A], "mvu_prec_a")?,
            prec_w: prec(r[PREC_W], "mvu_prec_w")?,
            agu_act: agu(AGU_ACT),
            agu_wgt: agu(AGU_WGT),
            agu_scaler: agu(AGU_SCALER),
            agu_bias: agu(AGU_BIAS),
            agu_out: agu(AGU_OUT),
            reduce_depth: r[REDUCE_DEPTH],
            countdown: r[COUNTDOWN],
            scaler_enable: r[SCALER_EN] != 0,
            pool_window: r[POOL_WINDOW],
            relu_enable: r[RELU_EN] != 0,
            quant_msb: r[QUANT_MSB],
            quant_bits: r[QUANT_BITS],
            dest_mask: r[DEST_MASK] as u8,
            dest_base: r[DEST_BASE],
        })
    }

    /// Register values that reproduce `job`.
    pub fn from_descriptor(job: &JobDescriptor) -> Self {
        let mut c = MvuCsrs::default();
        let r = &mut c.0;
        r[PREC_A] = encode_precision(job.prec_a);
        r[PREC_W] = encode_precision(job.prec_w);
        r[COUNTDOWN] = job.countdown;
        r[REDUCE_DEPTH] = job.reduce_depth;
        r[SCALER_EN] = job.scaler_enable as u32;
        r[POOL_WINDOW] = job.pool_window;
        r[RELU_EN] = job.relu_enable as u32;
        r[QUANT_MSB] = job.quant_msb;
        r[QUANT_BITS] = job.quant_bits;
        r[DEST_MASK] = job.dest_mask as u32;
        r[DEST_BASE] = job.dest_base;
        for (base, cfg) in [
            (AGU_ACT, &job.agu_act),
            (AGU_WGT, &job.agu_wgt),
            (AGU_SCALER, &job.agu_scaler),
            (AGU_BIAS, &job.agu_bias),
            (AGU_OUT, &job.agu_out),
        ] {
            agu_into(cfg, &mut r[base..base + AGU_REGS]);
        }
        c
    }

    /// `(offset, value)` for every register whose value differs from reset.
    pub fn diff_from_reset(&self) -> Vec<(usize, u32)> {
        let reset = MvuCsrs::default();
        (0..MVU_CSR_COUNT).filter(|&i| self.0[i] != reset.0[i]).map(|i| (i, self.0[i])).collect()
    }
}
