//! RV32I plus Zicsr and `mret`/`wfi`: encoding, decoding and disassembly.

use std::fmt;

use super::csr::csr_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchOp {
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadOp {
    Lb,
    Lh,
    Lw,
    Lbu,
    Lhu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOp {
    Sb,
    Sh,
    Sw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsrOp {
    Rw,
    Rs,
    Rc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instr {
    Lui {
        rd: u8,
        imm: i32,
    },
    Auipc {
        rd: u8,
        imm: i32,
    },
    Jal {
        rd: u8,
        offset: i32,
    },
    Jalr {
        rd: u8,
        rs1: u8,
        offset: i32,
    },
    Branch {
        op: BranchOp,
        rs1: u8,
        rs2: u8,
        offset: i32,
    },
    Load {
        op: LoadOp,
        rd: u8,
        rs1: u8,
        offset: i32,
    },
    Store {
        op: StoreOp,
        rs1: u8,
        rs2: u8,
        offset: i32,
    },
    OpImm {
        op: AluOp,
        rd: u8,
        rs1: u8,
        imm: i32,
    },
    Op {
        op: AluOp,
        rd: u8,
        rs1: u8,
        rs2: u8,
    },
    Fence,
    Ecall,
    Ebreak,
    Mret,
    Wfi,
    /// `src` is a register, or a 5-bit immediate when `imm` is set.
    Csr {
        op: CsrOp,
        rd: u8,
        csr: u16,
        src: u8,
        imm: bool,
    },
}

pub const REG_NAMES: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7", "s2",
    "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
];

pub fn reg_number(name: &str) -> Option<u8> {
    if let Some(n) = name.strip_prefix('x') {
        return n.parse::<u8>().ok().filter(|&n| n < 32);
    }
    if name == "fp" {
        return Some(8);
    }
    REG_NAMES.iter().position(|&r| r == name).map(|i| i as u8)
}

fn bits(w: u32, hi: u32, lo: u32) -> u32 {
    (w >> lo) & ((1 << (hi - lo + 1)) - 1)
}

fn sext(v: u32, width: u32) -> i32 {
    let s = 32 - width;
    ((v << s) as i32) >> s
}

impl AluOp {
    fn funct3(self) -> u32 {
        match self {
            AluOp::Add | AluOp::Sub => 0,
            AluOp::Sll => 1,
            AluOp::Slt => 2,
            AluOp::Sltu => 3,
            AluOp::Xor => 4,
            AluOp::Srl | AluOp::Sra => 5,
            AluOp::Or => 6,
            AluOp::And => 7,
        }
    }

    pub fn eval(self, a: u32, b: u32) -> u32 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Sll => a << (b & 31),
            AluOp::Slt => ((a as i32) < (b as i32)) as u32,
            AluOp::Sltu => (a < b) as u32,
            AluOp::Xor => a ^ b,
            AluOp::Srl => a >> (b & 31),
            AluOp::Sra => ((a as i32) >> (b & 31)) as u32,
            AluOp::Or => a | b,
            AluOp::And => a & b,
        }
    }

    fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Sll => "sll",
            AluOp::Slt => "slt",
            AluOp::Sltu => "sltu",
            AluOp::Xor => "xor",
            AluOp::Srl => "srl",
            AluOp::Sra => "sra",
            AluOp::Or => "or",
            AluOp::And => "and",
        }
    }
}

impl BranchOp {
    const ALL: [(BranchOp, u32, &'static str); 6] = [
        (BranchOp::Beq, 0, "beq"),
        (BranchOp::Bne, 1, "bne"),
        (BranchOp::Blt, 4, "blt"),
        (BranchOp::Bge, 5, "bge"),
        (BranchOp::Bltu, 6, "bltu"),
        (BranchOp::Bgeu, 7, "bgeu"),
    ];

    pub fn taken(self, a: u32, b: u32) -> bool {
        match self {
            BranchOp::Beq => a == b,
            BranchOp::Bne => a != b,
            BranchOp::Blt => (a as i32) < (b as i32),
            BranchOp::Bge => (a as i32) >= (b as i32),
            BranchOp::Bltu => a < b,
            BranchOp::Bgeu => a >= b,
        }
    }

    pub fn from_mnemonic(m: &str) -> Option<Self> {
        Self::ALL.iter().find(|e| e.2 == m).map(|e| e.0)
    }
}

impl LoadOp {
    const ALL: [(LoadOp, u32, &'static str); 5] = [
        (LoadOp::Lb, 0, "lb"),
        (LoadOp::Lh, 1, "lh"),
        (LoadOp::Lw, 2, "lw"),
        (LoadOp::Lbu, 4, "lbu"),
        (LoadOp::Lhu, 5, "lhu"),
    ];

    pub fn from_mnemonic(m: &str) -> Option<Self> {
        Self::ALL.iter().find(|e| e.2 == m).map(|e| e.0)
    }

    pub fn width(self) -> u32 {
        match self {
            LoadOp::Lb | LoadOp::Lbu => 1,
            LoadOp::Lh | LoadOp::Lhu => 2,
            LoadOp::Lw => 4,
        }
    }
}

impl StoreOp {
    const ALL: [(StoreOp, u32, &'static str); 3] =
        [(StoreOp::Sb, 0, "sb"), (StoreOp::Sh, 1, "sh"), (StoreOp::Sw, 2, "sw")];

    pub fn from_mnemonic(m: &str) -> Option<Self> {
        Self::ALL.iter().find(|e| e.2 == m).map(|e| e.0)
    }

    pub fn width(self) -> u32 {
        match self {
            StoreOp::Sb => 1,
            StoreOp::Sh => 2,
            StoreOp::Sw => 4,
        }
    }
}

pub fn alu_from_mnemonic(m: &str) -> Option<(AluOp, bool)> {
    let ops = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Sll,
        AluOp::Slt,
        AluOp::Sltu,
        AluOp::Xor,
        AluOp::Srl,
        AluOp::Sra,
        AluOp::Or,
        AluOp::And,
    ];
    if let Some(op) = ops.iter().find(|o| o.mnemonic() == m) {
        return Some((*op, false));
    }
    let base = m.strip_suffix('i')?;
    ops.iter().find(|o| o.mnemonic() == base && **o != AluOp::Sub).map(|o| (*o, true))
}

fn r_type(op: u32, rd: u8, f3: u32, rs1: u8, rs2: u8, f7: u32) -> u32 {
    f7 << 25 | (rs2 as u32) << 20 | (rs1 as u32) << 15 | f3 << 12 | (rd as u32) << 7 | op
}

fn i_type(op: u32, rd: u8, f3: u32, rs1: u8, imm: i32) -> u32 {
    ((imm as u32) & 0xfff) << 20 | (rs1 as u32) << 15 | f3 << 12 | (rd as u32) << 7 | op
}

fn s_type(op: u32, f3: u32, rs1: u8, rs2: u8, imm: i32) -> u32 {
    let imm = imm as u32;
    bits(imm, 11, 5) << 25 | (rs2 as u32) << 20 | (rs1 as u32) << 15 | f3 << 12 | bits(imm, 4, 0) << 7 | op
}

pub fn encode(i: &Instr) -> u32 {
    match *i {
        Instr::Lui { rd, imm } => (imm as u32) & 0xffff_f000 | (rd as u32) << 7 | 0x37,
        Instr::Auipc { rd, imm } => (imm as u32) & 0xffff_f000 | (rd as u32) << 7 | 0x17,
        Instr::Jal { rd, offset } => {
            let o = offset as u32;
            bits(o, 20, 20) << 31
                | bits(o, 10, 1) << 21
                | bits(o, 11, 11) << 20
                | bits(o, 19, 12) << 12
                | (rd as u32) << 7
                | 0x6f
        }
        Instr::Jalr { rd, rs1, offset } => i_type(0x67, rd, 0, rs1, offset),
        Instr::Branch { op, rs1, rs2, offset } => {
            let f3 = BranchOp::ALL.iter().find(|e| e.0 == op).unwrap().1;
            let o = offset as u32;
            bits(o, 12, 12) << 31
                | bits(o, 10, 5) << 25
                | (rs2 as u32) << 20
                | (rs1 as u32) << 15
                | f3 << 12
                | bits(o, 4, 1) << 8
                | bits(o, 11, 11) << 7
                | 0x63
        }
        Instr::Load { op, rd, rs1, offset } => {
            i_type(0x03, rd, LoadOp::ALL.iter().find(|e| e.0 == op).unwrap().1, rs1, offset)
        }
        Instr::Store { op, rs1, rs2, offset } => {
            s_type(0x23, StoreOp::ALL.iter().find(|e| e.0 == op).unwrap().1, rs1, rs2, offset)
        }
        Instr::OpImm { op, rd, rs1, imm } => match op {
            AluOp::Sll | AluOp::Srl => i_type(0x13, rd, op.funct3(), rs1, imm & 31),
            AluOp::Sra => i_type(0x13, rd, 5, rs1, imm & 31 | 0x400),
            _ => i_type(0x13, rd, op.funct3(), rs1, imm),
        },
        Instr::Op { op, rd, rs1, rs2 } => {
            let f7 = if matches!(op, AluOp::Sub | AluOp::Sra) { 0x20 } else { 0 };
            r_type(0x33, rd, op.funct3(), rs1, rs2, f7)
        }
        Instr::Fence => 0x0ff0_000f,
        Instr::Ecall => 0x0000_0073,
        Instr::Ebreak => 0x0010_0073,
        Instr::Mret => 0x3020_0073,
        Instr::Wfi => 0x1050_0073,
        Instr::Csr { op, rd, csr, src, imm } => {
            let f3 = match op {
                CsrOp::Rw => 1,
                CsrOp::Rs => 2,
                CsrOp::Rc => 3,
            } | if imm { 4 } else { 0 };
            (csr as u32) << 20 | (src as u32) << 15 | f3 << 12 | (rd as u32) << 7 | 0x73
        }
    }
}

pub fn decode(w: u32) -> Option<Instr> {
    let rd = bits(w, 11, 7) as u8;
    let rs1 = bits(w, 19, 15) as u8;
    let rs2 = bits(w, 24, 20) as u8;
    let f3 = bits(w, 14, 12);
    let f7 = bits(w, 31, 25);
    let imm_i = sext(bits(w, 31, 20), 12);
    Some(match w & 0x7f {
        0x37 => Instr::Lui { rd, imm: (w & 0xffff_f000) as i32 },
        0x17 => Instr::Auipc { rd, imm: (w & 0xffff_f000) as i32 },
        0x6f => {
            let o = bits(w, 31, 31) << 20 | bits(w, 19, 12) << 12 | bits(w, 20, 20) << 11 | bits(w, 30, 21) << 1;
            Instr::Jal { rd, offset: sext(o, 21) }
        }
        0x67 if f3 == 0 => Instr::Jalr { rd, rs1, offset: imm_i },
        0x63 => {
            let op = BranchOp::ALL.iter().find(|e| e.1 == f3)?.0;
            let o = bits(w, 31, 31) << 12 | bits(w, 7, 7) << 11 | bits(w, 30, 25) << 5 | bits(w, 11, 8) << 1;
            Instr::Branch { op, rs1, rs2, offset: sext(o, 13) }
        }
        0x03 => Instr::Load { op: LoadOp::ALL.iter().find(|e| e.1 == f3)?.0, rd, rs1, offset: imm_i },
        0x23 => {
            let op = StoreOp::ALL.iter().find(|e| e.1 == f3)?.0;
            let o = bits(w, 31, 25) << 5 | bits(w, 11, 7);
            Instr::Store { op, rs1, rs2, offset: sext(o, 12) }
        }
        0x13 => {
            let op = match (f3, f7) {
                (0, _) => AluOp::Add,
                (2, _) => AluOp::Slt,
                (3, _) => AluOp::Sltu,
                (4, _) => AluOp::Xor,
                (6, _) => AluOp::Or,
                (7, _) => AluOp::And,
                (1, 0) => AluOp::Sll,
                (5, 0) => AluOp::Srl,
                (5, 0x20) => AluOp::Sra,
                _ => return None,
            };
            let imm = if matches!(op, AluOp::Sll | AluOp::Srl | AluOp::Sra) { rs2 as i32 } else { imm_i };
            Instr::OpImm { op, rd, rs1, imm }
        }
        0x33 => {
            let op = match (f3, f7) {
                (0, 0) => AluOp::Add,
                (0, 0x20) => AluOp::Sub,
                (1, 0) => AluOp::Sll,
                (2, 0) => AluOp::Slt,
                (3, 0) => AluOp::Sltu,
                (4, 0) => AluOp::Xor,
                (5, 0) => AluOp::Srl,
                (5, 0x20) => AluOp::Sra,
                (6, 0) => AluOp::Or,
                (7, 0) => AluOp::And,
                _ => return None,
            };
            Instr::Op { op, rd, rs1, rs2 }
        }
        0x0f if f3 == 0 => Instr::Fence,
        0x73 => match f3 {
            0 => match w {
                0x0000_0073 => Instr::Ecall,
                0x0010_0073 => Instr::Ebreak,
                0x3020_0073 => Instr::Mret,
                0x1050_0073 => Instr::Wfi,
                _ => return None,
            },
            4 => return None,
            _ => {
                let op = match f3 & 3 {
                    1 => CsrOp::Rw,
                    2 => CsrOp::Rs,
                    _ => CsrOp::Rc,
                };
                Instr::Csr { op, rd, csr: bits(w, 31, 20) as u16, src: rs1, imm: f3 & 4 != 0 }
            }
        },
        _ => return None,
    })
}

impl fmt::Display for Instr {
    /// Canonical disassembly accepted back by the assembler. Branch and jump
    /// targets are printed as byte offsets.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |n: u8| REG_NAMES[n as usize];
        match *self {
            Instr::Lui { rd, imm } => write!(f, "lui {}, {:#x}", r(rd), (imm as u32) >> 12),
            Instr::Auipc { rd, imm } => write!(f, "auipc {}, {:#x}", r(rd), (imm as u32) >> 12),
            Instr::Jal { rd, offset } => write!(f, "jal {}, {}", r(rd), offset),
            Instr::Jalr { rd, rs1, offset } => write!(f, "jalr {}, {}({})", r(rd), offset, r(rs1)),
            Instr::Branch { op, rs1, rs2, offset } => {
                let m = BranchOp::ALL.iter().find(|e| e.0 == op).unwrap().2;
                write!(f, "{m} {}, {}, {}", r(rs1), r(rs2), offset)
            }
            Instr::Load { op, rd, rs1, offset } => {
                let m = LoadOp::ALL.iter().find(|e| e.0 == op).unwrap().2;
                write!(f, "{m} {}, {}({})", r(rd), offset, r(rs1))
            }
            Instr::Store { op, rs1, rs2, offset } => {
                let m = StoreOp::ALL.iter().find(|e| e.0 == op).unwrap().2;
                write!(f, "{m} {}, {}({})", r(rs2), offset, r(rs1))
            }
            Instr::OpImm { op, rd, rs1, imm } => {
                write!(f, "{}i {}, {}, {}", op.mnemonic(), r(rd), r(rs1), imm)
            }
            Instr::Op { op, rd, rs1, rs2 } => {
                write!(f, "{} {}, {}, {}", op.mnemonic(), r(rd), r(rs1), r(rs2))
            }
            Instr::Fence => write!(f, "fence"),
            Instr::Ecall => write!(f, "ecall"),
            Instr::Ebreak => write!(f, "ebreak"),
            Instr::Mret => write!(f, "mret"),
            Instr::Wfi => write!(f, "wfi"),
            Instr::Csr { op, rd, csr, src, imm } => {
                let m = match op {
                    CsrOp::Rw => "csrrw",
                    CsrOp::Rs => "csrrs",
                    CsrOp::Rc => "csrrc",
                };
                let name = csr_name(csr).map_or_else(|| format!("{csr:#x}"), str::to_string);
                if imm {
                    write!(f, "{m}i {}, {}, {}", r(rd), name, src)
                } else {
                    write!(f, "{m} {}, {}, {}", r(rd), name, r(src))
                }
            }
        }
    }
}

pub fn disassemble(word: u32) -> String {
    decode(word).map_or_else(|| format!(".word {word:#010x}"), |i| i.to_string())
}
