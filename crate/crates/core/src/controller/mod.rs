//! Eight-hart barrel RV32I controller.
//!
//! Hart `cycle mod 8` retires one instruction per clock. Each hart owns its
//! PC, registers and a bank of MVU job registers that drive the MVU with the
//! same index. Instruction and data RAMs are shared.

pub mod asm;
pub mod csr;
pub mod isa;

use std::fmt::Write as _;

pub use asm::{assemble, Program, HART_REGION_BYTES, HART_REGION_WORDS, IRAM_BYTES, IRAM_WORDS};
pub use isa::{decode, disassemble, encode, Instr};

use csr::*;
use isa::{CsrOp, LoadOp, StoreOp};

use crate::error::{Error, Result};
use crate::mvu::{JobDescriptor, MvuArray};

pub const NUM_HARTS: usize = 8;
pub const DRAM_BYTES: usize = 8192;

/// What a hart sees of its MVU.
pub trait MvuPort {
    fn start_job(&mut self, mvu: usize, job: JobDescriptor) -> Result<()>;
    fn status(&self, mvu: usize) -> u32;
    fn irq_pending(&self, mvu: usize) -> bool;
    fn clear_irq(&mut self, mvu: usize);
    fn mvp_cycles(&self, mvu: usize) -> u64;
}

impl MvuPort for MvuArray {
    fn start_job(&mut self, mvu: usize, job: JobDescriptor) -> Result<()> {
        self.units[mvu].start(job)
    }

    fn status(&self, mvu: usize) -> u32 {
        self.units[mvu].status()
    }

    fn irq_pending(&self, mvu: usize) -> bool {
        self.units[mvu].irq_pending()
    }

    fn clear_irq(&mut self, mvu: usize) {
        self.units[mvu].clear_irq()
    }

    fn mvp_cycles(&self, mvu: usize) -> u64 {
        self.units[mvu].mvp_cycles
    }
}

/// A port with no MVUs attached: jobs are recorded and never finish.
#[derive(Debug, Clone, Default)]
pub struct NullPort {
    pub started: Vec<(usize, JobDescriptor)>,
    pub irq: [bool; NUM_HARTS],
}

impl MvuPort for NullPort {
    fn start_job(&mut self, mvu: usize, job: JobDescriptor) -> Result<()> {
        self.started.push((mvu, job));
        Ok(())
    }

    fn status(&self, _: usize) -> u32 {
        0
    }

    fn irq_pending(&self, mvu: usize) -> bool {
        self.irq[mvu]
    }

    fn clear_irq(&mut self, mvu: usize) {
        self.irq[mvu] = false;
    }

    fn mvp_cycles(&self, _: usize) -> u64 {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hart {
    pub id: usize,
    pub pc: u32,
    pub regs: [u32; 32],
    pub halted: bool,
    pub mstatus: u32,
    pub mie: u32,
    pub mtvec: u32,
    pub mscratch: u32,
    pub mepc: u32,
    pub mcause: u32,
    pub minstret: u64,
    pub mvu: MvuCsrs,
}

impl Hart {
    pub fn new(id: usize) -> Self {
        Hart {
            id,
            pc: (id * HART_REGION_BYTES) as u32,
            regs: [0; 32],
            halted: false,
            mstatus: 0,
            mie: 0,
            mtvec: 0,
            mscratch: 0,
            mepc: 0,
            mcause: 0,
            minstret: 0,
            mvu: MvuCsrs::default(),
        }
    }

    fn set(&mut self, rd: u8, v: u32, fx: &mut Vec<Effect>) {
        if rd != 0 {
            self.regs[rd as usize] = v;
            fx.push(Effect::Reg(rd, v));
        }
    }
}

/// A state change made by one retired instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    Reg(u8, u32),
    Mem {
        addr: u32,
        value: u32,
        width: u32,
    },
    Csr(u16, u32),
    /// Trap into the handler.
    Trap {
        cause: u32,
        epc: u32,
    },
    Halt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retired {
    pub cycle: u64,
    pub hart: usize,
    pub pc: u32,
    pub word: u32,
    pub effects: Vec<Effect>,
}

impl Retired {
    /// `cycle hart pc word disassembly | effects`, one line.
    pub fn trace_line(&self) -> String {
        let mut s = format!(
            "{:>10} h{} {:08x} {:08x} {:<36}",
            self.cycle,
            self.hart,
            self.pc,
            self.word,
            disassemble(self.word)
        );
        for e in &self.effects {
            let _ = match e {
                Effect::Reg(r, v) => write!(s, " x{r}={v:#010x}"),
                Effect::Mem { addr, value, width } => write!(s, " m{width}[{addr:#06x}]={value:#010x}"),
                Effect::Csr(c, v) => write!(s, " csr[{c:#05x}]={v:#010x}"),
                Effect::Trap { cause, epc } => write!(s, " trap({cause:#010x},{epc:#010x})"),
                Effect::Halt => write!(s, " halt"),
            };
        }
        s.trim_end().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Controller {
    pub harts: Vec<Hart>,
    pub iram: Vec<u32>,
    pub dram: Vec<u8>,
    pub cycle: u64,
}

impl Default for Controller {
    fn default() -> Self {
        Self::new()
    }
}

impl Controller {
    pub fn new() -> Self {
        Controller {
            harts: (0..NUM_HARTS).map(Hart::new).collect(),
            iram: vec![0; IRAM_WORDS],
            dram: vec![0; DRAM_BYTES],
            cycle: 0,
        }
    }

    pub fn with_program(program: &[u32]) -> Result<Self> {
        let mut c = Self::new();
        c.load_program(program)?;
        Ok(c)
    }

    pub fn load_program(&mut self, image: &[u32]) -> Result<()> {
        if image.len() > IRAM_WORDS {
            return Err(Error::CapacityExceeded(format!("program of {} words exceeds {IRAM_WORDS}", image.len())));
        }
        self.iram.fill(0);
        self.iram[..image.len()].copy_from_slice(image);
        Ok(())
    }

    /// Restarts hart `h` at the start of its region.
    pub fn restart_hart(&mut self, h: usize) {
        let hart = &mut self.harts[h];
        hart.pc = (h * HART_REGION_BYTES) as u32;
        hart.halted = false;
    }

    pub fn all_halted(&self) -> bool {
        self.harts.iter().all(|h| h.halted)
    }

    pub fn read_word(&self, addr: u32) -> Result<u32> {
        self.load(addr, 4).map(|v| v as u32)
    }

    pub fn write_word(&mut self, addr: u32, value: u32) -> Result<()> {
        self.store(addr, value, 4)
    }

    fn check(&self, addr: u32, width: u32) -> Result<usize> {
        if !addr.is_multiple_of(width) {
            return Err(Error::MisalignedAccess { addr });
        }
        let a = addr as usize;
        if a + width as usize > self.dram.len() {
            return Err(Error::AccessFault { addr });
        }
        Ok(a)
    }

    fn load(&self, addr: u32, width: u32) -> Result<u64> {
        let a = self.check(addr, width)?;
        let mut buf = [0u8; 4];
        buf[..width as usize].copy_from_slice(&self.dram[a..a + width as usize]);
        Ok(u32::from_le_bytes(buf) as u64)
    }

    fn store(&mut self, addr: u32, value: u32, width: u32) -> Result<()> {
        let a = self.check(addr, width)?;
        self.dram[a..a + width as usize].copy_from_slice(&value.to_le_bytes()[..width as usize]);
        Ok(())
    }

    fn csr_read(&self, h: usize, addr: u16, port: &dyn MvuPort) -> Result<u32> {
        let hart = &self.harts[h];
        Ok(match addr {
            MSTATUS => hart.mstatus,
            MIE => hart.mie,
            MTVEC => hart.mtvec,
            MSCRATCH => hart.mscratch,
            MEPC => hart.mepc,
            MCAUSE => hart.mcause,
            MIP => {
                if port.irq_pending(h) {
                    MVU_IRQ_BIT
                } else {
                    0
                }
            }
            MCYCLE => self.cycle as u32,
            MCYCLEH => (self.cycle >> 32) as u32,
            MINSTRET => hart.minstret as u32,
            MINSTRETH => (hart.minstret >> 32) as u32,
            MHARTID => h as u32,
            a if (MVU_CSR_BASE..MVU_CSR_BASE + MVU_CSR_COUNT as u16).contains(&a) => {
                match (a - MVU_CSR_BASE) as usize {
                    START => 0,
                    STATUS => port.status(h),
                    IRQ => port.irq_pending(h) as u32,
                    MVP_CYCLES => port.mvp_cycles(h) as u32,
                    off => hart.mvu.0[off],
                }
            }
            a => return Err(Error::UnknownCsr(a as u32)),
        })
    }

    fn csr_write(&mut self, h: usize, addr: u16, v: u32, port: &mut dyn MvuPort) -> Result<()> {
        let hart = &mut self.harts[h];
        match addr {
            MSTATUS => hart.mstatus = v & (MSTATUS_MIE | MSTATUS_MPIE),
            MIE => hart.mie = v & MVU_IRQ_BIT,
            MTVEC => hart.mtvec = v & !3,
            MSCRATCH => hart.mscratch = v,
            MEPC => hart.mepc = v & !3,
            MCAUSE => hart.mcause = v,
            MIP | MCYCLE | MCYCLEH | MINSTRET | MINSTRETH | MHARTID => {}
            a if (MVU_CSR_BASE..MVU_CSR_BASE + MVU_CSR_COUNT as u16).contains(&a) => {
                match (a - MVU_CSR_BASE) as usize {
                    START => {
                        if v != 0 {
                            let job = hart.mvu.descriptor()?;
                            port.start_job(h, job)?;
                        }
                    }
                    IRQ => {
                        if v & 1 != 0 {
                            port.clear_irq(h);
                        }
                    }
                    STATUS | MVP_CYCLES => {}
                    off => hart.mvu.0[off] = v,
                }
            }
            a => return Err(Error::UnknownCsr(a as u32)),
        }
        Ok(())
    }

    /// Advances one clock. Returns the retired instruction, or `None` when the
    /// scheduled hart is halted.
    pub fn step(&mut self, port: &mut dyn MvuPort) -> Result<Option<Retired>> {
        let h = (self.cycle % NUM_HARTS as u64) as usize;
        let cycle = self.cycle;
        self.cycle += 1;
        if self.harts[h].halted {
            return Ok(None);
        }
        let mut fx = vec![];
        {
            let hart = &mut self.harts[h];
            if hart.mstatus & MSTATUS_MIE != 0 && hart.mie & MVU_IRQ_BIT != 0 && port.irq_pending(h) {
                hart.mepc = hart.pc;
                hart.mcause = MCAUSE_MVU_IRQ;
                let mpie = if hart.mstatus & MSTATUS_MIE != 0 { MSTATUS_MPIE } else { 0 };
                hart.mstatus = mpie;
                fx.push(Effect::Trap { cause: MCAUSE_MVU_IRQ, epc: hart.pc });
                hart.pc = hart.mtvec;
            }
        }
        let pc = self.harts[h].pc;
        if !pc.is_multiple_of(4) {
            return Err(Error::MisalignedAccess { addr: pc });
        }
        let word = *self.iram.get(pc as usize / 4).ok_or(Error::AccessFault { addr: pc })?;
        let ins = decode(word).ok_or(Error::IllegalInstruction { word, pc })?;
        let mut next = pc.wrapping_add(4);
        let regs = self.harts[h].regs;
        let rs = |r: u8| regs[r as usize];
        match ins {
            Instr::Lui { rd, imm } => self.harts[h].set(rd, imm as u32, &mut fx),
            Instr::Auipc { rd, imm } => self.harts[h].set(rd, pc.wrapping_add(imm as u32), &mut fx),
            Instr::Jal { rd, offset } => {
                next = pc.wrapping_add(offset as u32);
                self.harts[h].set(rd, pc.wrapping_add(4), &mut fx);
            }
            Instr::Jalr { rd, rs1, offset } => {
                next = rs(rs1).wrapping_add(offset as u32) & !1;
                self.harts[h].set(rd, pc.wrapping_add(4), &mut fx);
            }
            Instr::Branch { op, rs1, rs2, offset } => {
                if op.taken(rs(rs1), rs(rs2)) {
                    next = pc.wrapping_add(offset as u32);
                }
            }
            Instr::Load { op, rd, rs1, offset } => {
                let addr = rs(rs1).wrapping_add(offset as u32);
                let raw = self.load(addr, op.width())? as u32;
                let v = match op {
                    LoadOp::Lb => raw as u8 as i8 as i32 as u32,
                    LoadOp::Lh => raw as u16 as i16 as i32 as u32,
                    _ => raw,
                };
                self.harts[h].set(rd, v, &mut fx);
            }
            Instr::Store { op, rs1, rs2, offset } => {
                let addr = rs(rs1).wrapping_add(offset as u32);
                let width = op.width();
                let value = match op {
                    StoreOp::Sb => rs(rs2) & 0xff,
                    StoreOp::Sh => rs(rs2) & 0xffff,
                    StoreOp::Sw => rs(rs2),
                };
                self.store(addr, value, width)?;
                fx.push(Effect::Mem { addr, value, width });
            }
            Instr::OpImm { op, rd, rs1, imm } => {
                let v = op.eval(rs(rs1), imm as u32);
                self.harts[h].set(rd, v, &mut fx);
            }
            Instr::Op { op, rd, rs1, rs2 } => {
                let v = op.eval(rs(rs1), rs(rs2));
                self.harts[h].set(rd, v, &mut fx);
            }
            Instr::Fence | Instr::Wfi => {}
            Instr::Ecall | Instr::Ebreak => {
                self.harts[h].halted = true;
                fx.push(Effect::Halt);
            }
            Instr::Mret => {
                let hart = &mut self.harts[h];
                next = hart.mepc;
                let mie = if hart.mstatus & MSTATUS_MPIE != 0 { MSTATUS_MIE } else { 0 };
                hart.mstatus = mie | MSTATUS_MPIE;
            }
            Instr::Csr { op, rd, csr, src, imm } => {
                let operand = if imm { src as u32 } else { rs(src) };
                let writes = op == CsrOp::Rw || src != 0;
                let old = self.csr_read(h, csr, &*port)?;
                if writes {
                    let new = match op {
                        CsrOp::Rw => operand,
                        CsrOp::Rs => old | operand,
                        CsrOp::Rc => old & !operand,
                    };
                    self.csr_write(h, csr, new, port)?;
                    fx.push(Effect::Csr(csr, new));
                }
                self.harts[h].set(rd, old, &mut fx);
            }
        }
        let hart = &mut self.harts[h];
        hart.pc = next;
        hart.minstret += 1;
        Ok(Some(Retired { cycle, hart: h, pc, word, effects: fx }))
    }

    /// Runs until every hart halts or `max_cycles` elapse.
    pub fn run(&mut self, port: &mut dyn MvuPort, max_cycles: u64) -> Result<Vec<Retired>> {
        let mut trace = vec![];
        let end = self.cycle + max_cycles;
        while !self.all_halted() {
            if self.cycle >= end {
                return Err(Error::Timeout(format!("controller still running after {max_cycles} cycles")));
            }
            if let Some(r) = self.step(port)? {
                trace.push(r);
            }
        }
        Ok(trace)
    }
}
