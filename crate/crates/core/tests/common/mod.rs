//! Test-only reference RV32I interpreter and instruction encoders.
//!
//! Written from the base ISA encoding tables without using the crate's
//! decoder so the controller can be cross-checked against it.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

pub const MSCRATCH: u32 = 0x340;

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

pub fn r_type(f7: u32, rs2: u32, rs1: u32, f3: u32, rd: u32, op: u32) -> u32 {
    f7 << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
}

pub fn i_type(imm: i32, rs1: u32, f3: u32, rd: u32, op: u32) -> u32 {
    ((imm as u32) & 0xfff) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
}

pub fn s_type(imm: i32, rs2: u32, rs1: u32, f3: u32) -> u32 {
    let i = imm as u32;
    (i >> 5 & 0x7f) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (i & 0x1f) << 7 | 0x23
}

pub fn b_type(imm: i32, rs2: u32, rs1: u32, f3: u32) -> u32 {
    let i = imm as u32;
    (i >> 12 & 1) << 31
        | (i >> 5 & 0x3f) << 25
        | rs2 << 20
        | rs1 << 15
        | f3 << 12
        | (i >> 1 & 0xf) << 8
        | (i >> 11 & 1) << 7
        | 0x63
}

pub fn u_type(imm20: u32, rd: u32, op: u32) -> u32 {
    (imm20 & 0xfffff) << 12 | rd << 7 | op
}

pub fn j_type(imm: i32, rd: u32) -> u32 {
    let i = imm as u32;
    (i >> 20 & 1) << 31 | (i >> 1 & 0x3ff) << 21 | (i >> 11 & 1) << 20 | (i >> 12 & 0xff) << 12 | rd << 7 | 0x6f
}

pub const ECALL: u32 = 0x0000_0073;

fn sext(v: u32, bits: u32) -> i32 {
    ((v << (32 - bits)) as i32) >> (32 - bits)
}

/// Single-hart interpreter over a private copy of instruction and data memory.
pub struct RefCpu {
    pub regs: [u32; 32],
    pub pc: u32,
    pub mem: Vec<u8>,
    pub csrs: HashMap<u32, u32>,
    pub halted: bool,
    pub retired: u64,
}

impl RefCpu {
    pub fn new(dram_bytes: usize) -> Self {
        RefCpu { regs: [0; 32], pc: 0, mem: vec![0; dram_bytes], csrs: HashMap::new(), halted: false, retired: 0 }
    }

    fn load(&self, addr: u32, width: u32) -> u32 {
        assert_eq!(addr % width, 0, "misaligned load");
        let a = addr as usize;
        let mut b = [0u8; 4];
        b[..width as usize].copy_from_slice(&self.mem[a..a + width as usize]);
        u32::from_le_bytes(b)
    }

    fn store(&mut self, addr: u32, v: u32, width: u32) {
        assert_eq!(addr % width, 0, "misaligned store");
        let a = addr as usize;
        self.mem[a..a + width as usize].copy_from_slice(&v.to_le_bytes()[..width as usize]);
    }

    /// Executes one instruction. Panics on anything outside the tested subset.
    pub fn step(&mut self, word: u32) {
        let op = word & 0x7f;
        let rd = (word >> 7 & 0x1f) as usize;
        let f3 = word >> 12 & 7;
        let rs1 = self.regs[(word >> 15 & 0x1f) as usize];
        let rs2 = self.regs[(word >> 20 & 0x1f) as usize];
        let f7 = word >> 25;
        let imm_i = sext(word >> 20, 12);
        let mut next = self.pc.wrapping_add(4);
        let mut out: Option<u32> = None;
        match op {
            0x37 => out = Some(word & 0xffff_f000),
            0x17 => out = Some(self.pc.wrapping_add(word & 0xffff_f000)),
            0x6f => {
                let imm =
                    (word >> 31) << 20 | (word >> 12 & 0xff) << 12 | (word >> 20 & 1) << 11 | (word >> 21 & 0x3ff) << 1;
                out = Some(next);
                next = self.pc.wrapping_add(sext(imm, 21) as u32);
            }
            0x67 => {
                out = Some(next);
                next = rs1.wrapping_add(imm_i as u32) & !1;
            }
            0x63 => {
                let imm =
                    (word >> 31) << 12 | (word >> 7 & 1) << 11 | (word >> 25 & 0x3f) << 5 | (word >> 8 & 0xf) << 1;
                let taken = match f3 {
                    0 => rs1 == rs2,
                    1 => rs1 != rs2,
                    4 => (rs1 as i32) < (rs2 as i32),
                    5 => (rs1 as i32) >= (rs2 as i32),
                    6 => rs1 < rs2,
                    7 => rs1 >= rs2,
                    _ => panic!("bad branch"),
                };
                if taken {
                    next = self.pc.wrapping_add(sext(imm, 13) as u32);
                }
            }
            0x03 => {
                let a = rs1.wrapping_add(imm_i as u32);
                out = Some(match f3 {
                    0 => self.load(a, 1) as u8 as i8 as i32 as u32,
                    1 => self.load(a, 2) as u16 as i16 as i32 as u32,
                    2 => self.load(a, 4),
                    4 => self.load(a, 1),
                    5 => self.load(a, 2),
                    _ => panic!("bad load"),
                });
            }
            0x23 => {
                let imm = sext((word >> 25) << 5 | (word >> 7 & 0x1f), 12);
                let a = rs1.wrapping_add(imm as u32);
                match f3 {
                    0 => self.store(a, rs2 & 0xff, 1),
                    1 => self.store(a, rs2 & 0xffff, 2),
                    2 => self.store(a, rs2, 4),
                    _ => panic!("bad store"),
                }
            }
            0x13 | 0x33 => {
                let b = if op == 0x13 { imm_i as u32 } else { rs2 };
                let alt = f7 == 0x20;
                out = Some(match f3 {
                    0 if op == 0x33 && alt => rs1.wrapping_sub(b),
                    0 => rs1.wrapping_add(b),
                    1 => rs1 << (b & 31),
                    2 => ((rs1 as i32) < (b as i32)) as u32,
                    3 => (rs1 < b) as u32,
                    4 => rs1 ^ b,
                    5 if alt => ((rs1 as i32) >> (b & 31)) as u32,
                    5 => rs1 >> (b & 31),
                    6 => rs1 | b,
                    7 => rs1 & b,
                    _ => unreachable!(),
                });
            }
            0x0f => {}
            0x73 if f3 == 0 => self.halted = true,
            0x73 => {
                let csr = word >> 20;
                let src = if f3 >= 5 { word >> 15 & 0x1f } else { rs1 };
                let old = *self.csrs.get(&csr).unwrap_or(&0);
                let writes = f3 & 3 == 1 || (word >> 15 & 0x1f) != 0;
                if writes {
                    let new = match f3 & 3 {
                        1 => src,
                        2 => old | src,
                        3 => old & !src,
                        _ => panic!("bad csr op"),
                    };
                    self.csrs.insert(csr, new);
                }
                out = Some(old);
            }
            _ => panic!("opcode {op:#x} outside the reference subset"),
        }
        if let Some(v) = out {
            if rd != 0 {
                self.regs[rd] = v;
            }
        }
        self.pc = next;
        self.retired += 1;
    }

    /// Runs `program` (loaded at address 0) until `ecall` or `max` steps.
    pub fn run(&mut self, program: &[u32], max: u64) {
        while !self.halted && self.retired < max {
            let w = program[(self.pc / 4) as usize];
            self.step(w);
        }
    }
}
