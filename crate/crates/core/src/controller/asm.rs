//! Two-pass assembler for the controller's instruction set.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! line      := [label ':']* [directive | instruction] [comment]
//! comment   := ('#' | ';') any*
//! directive := '.segment' N | '.hart' N | '.word' imm | '.org' word_index
//! operand   := register | imm | csr | imm '(' register ')' | label
//! ```
//!
//! `.segment N` starts program overlay `N`; every overlay is a full
//! instruction-RAM image. `.hart N` moves to hart `N`'s region and keeps
//! emitted code inside it. Immediates are decimal or `0x` hex, optionally
//! negative. Branch and jump targets are labels or byte offsets.

use std::collections::HashMap;

use super::csr::csr_address;
use super::isa::{alu_from_mnemonic, encode, reg_number, AluOp, BranchOp, CsrOp, Instr, LoadOp, StoreOp};
use crate::error::{Error, Result};

pub const IRAM_BYTES: usize = 8192;
pub const IRAM_WORDS: usize = IRAM_BYTES / 4;
pub const HART_REGION_BYTES: usize = 1024;
pub const HART_REGION_WORDS: usize = HART_REGION_BYTES / 4;

/// Assembled overlays, each `IRAM_WORDS` long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub segments: Vec<Vec<u32>>,
    /// Label byte addresses, keyed by name.
    pub labels: HashMap<String, (usize, u32)>,
}

impl Program {
    /// Segments concatenated as little-endian words.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.segments.iter().flatten().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Program> {
        if bytes.is_empty() || !bytes.len().is_multiple_of(IRAM_BYTES) {
            return Err(Error::Format(format!(
                "program image of {} bytes is not a whole number of {IRAM_BYTES}-byte segments",
                bytes.len()
            )));
        }
        let words: Vec<u32> = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Program { segments: words.chunks(IRAM_WORDS).map(<[u32]>::to_vec).collect(), labels: HashMap::new() })
    }
}

#[derive(Debug, Clone)]
struct Stmt {
    line: usize,
    mnemonic: String,
    operands: Vec<String>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn split_line(raw: &str, line: usize) -> Result<(Vec<String>, Option<Stmt>)> {
    let text = raw.split(['#', ';']).next().unwrap_or("").trim();
    let mut rest = text;
    let mut labels = vec![];
    while let Some(pos) = rest.find(':') {
        let (name, tail) = rest.split_at(pos);
        let name = name.trim();
        if name.is_empty()
            || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            || name.starts_with(|c: char| c.is_ascii_digit())
        {
            return Err(parse_err(line, format!("bad label `{name}`")));
        }
        labels.push(name.to_string());
        rest = tail[1..].trim();
    }
    if rest.is_empty() {
        return Ok((labels, None));
    }
    let (mnemonic, ops) = match rest.find(char::is_whitespace) {
        Some(p) => (&rest[..p], rest[p..].trim()),
        None => (rest, ""),
    };
    let operands = if ops.is_empty() { vec![] } else { ops.split(',').map(|s| s.trim().to_string()).collect() };
    if operands.iter().any(String::is_empty) {
        return Err(parse_err(line, "empty operand"));
    }
    Ok((labels, Some(Stmt { line, mnemonic: mnemonic.to_ascii_lowercase(), operands })))
}

pub fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(&h.replace('_', ""), 16).ok()?
    } else if body.starts_with(|c: char| c.is_ascii_digit()) {
        body.replace('_', "").parse::<i64>().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}

/// Number of words `li` expands to for `value`.
fn li_words(value: i32) -> usize {
    if (-2048..2048).contains(&value) || value & 0xfff == 0 {
        1
    } else {
        2
    }
}

fn li_expand(rd: u8, value: i32) -> Vec<Instr> {
    if (-2048..2048).contains(&value) {
        return vec![Instr::OpImm { op: AluOp::Add, rd, rs1: 0, imm: value }];
    }
    let hi = (value as u32).wrapping_add(0x800) & 0xffff_f000;
    let lo = value.wrapping_sub(hi as i32);
    let mut v = vec![Instr::Lui { rd, imm: hi as i32 }];
    if lo != 0 {
        v.push(Instr::OpImm { op: AluOp::Add, rd, rs1: rd, imm: lo });
    }
    v
}

struct Ctx<'a> {
    line: usize,
    pc: u32,
    labels: &'a HashMap<String, (usize, u32)>,
}

impl Ctx<'_> {
    fn reg(&self, s: &str) -> Result<u8> {
        reg_number(s).ok_or_else(|| parse_err(self.line, format!("unknown register `{s}`")))
    }

    fn imm(&self, s: &str, lo: i64, hi: i64) -> Result<i64> {
        let v = parse_int(s).ok_or_else(|| parse_err(self.line, format!("bad immediate `{s}`")))?;
        if v < lo || v > hi {
            return Err(Error::Range { line: self.line, value: v });
        }
        Ok(v)
    }

    fn csr(&self, s: &str) -> Result<u16> {
        if let Some(a) = csr_address(s) {
            return Ok(a);
        }
        match parse_int(s) {
            Some(v) if (0..4096).contains(&v) => Ok(v as u16),
            Some(v) => Err(Error::Range { line: self.line, value: v }),
            None => Err(parse_err(self.line, format!("unknown CSR `{s}`"))),
        }
    }

    /// Target as a pc-relative byte offset, checked against `bits` of signed
    /// range and 2-byte alignment.
    fn target(&self, s: &str, bits: u32) -> Result<i32> {
        let off = if let Some(v) = parse_int(s) {
            v
        } else if let Some(&(_, addr)) = self.labels.get(s) {
            addr as i64 - self.pc as i64
        } else {
            return Err(parse_err(self.line, format!("undefined label `{s}`")));
        };
        let lim = 1i64 << (bits - 1);
        if off < -lim || off >= lim || off % 2 != 0 {
            return Err(Error::Range { line: self.line, value: off });
        }
        Ok(off as i32)
    }

    /// `imm(reg)` memory operand.
    fn mem(&self, s: &str) -> Result<(i32, u8)> {
        let open = s.find('(').ok_or_else(|| parse_err(self.line, format!("expected imm(reg), got `{s}`")))?;
        let close = s.strip_suffix(')').ok_or_else(|| parse_err(self.line, format!("expected imm(reg), got `{s}`")))?;
        let off = s[..open].trim();
        let off = if off.is_empty() { 0 } else { self.imm(off, -2048, 2047)? };
        Ok((off as i32, self.reg(close[open + 1..].trim())?))
    }
}

fn arity(st: &Stmt, n: usize) -> Result<()> {
    if st.operands.len() != n {
        return Err(parse_err(st.line, format!("`{}` takes {n} operand(s), got {}", st.mnemonic, st.operands.len())));
    }
    Ok(())
}

/// Size in words, computed without resolving labels.
fn size_of(st: &Stmt) -> Result<usize> {
    Ok(match st.mnemonic.as_str() {
        "li" => {
            arity(st, 2)?;
            let v = parse_int(&st.operands[1])
                .ok_or_else(|| parse_err(st.line, format!("bad immediate `{}`", st.operands[1])))?;
            if !(i32::MIN as i64..=u32::MAX as i64).contains(&v) {
                return Err(Error::Range { line: st.line, value: v });
            }
            li_words(v as u32 as i32)
        }
        _ => 1,
    })
}

fn lower(st: &Stmt, ctx: &Ctx) -> Result<Vec<Instr>> {
    let o = &st.operands;
    let m = st.mnemonic.as_str();
    let one = |i: Instr| Ok(vec![i]);
    let csr_op = |base: &str| match base {
        "csrrw" => Some(CsrOp::Rw),
        "csrrs" => Some(CsrOp::Rs),
        "csrrc" => Some(CsrOp::Rc),
        _ => None,
    };
    match m {
        "nop" => {
            arity(st, 0)?;
            one(Instr::OpImm { op: AluOp::Add, rd: 0, rs1: 0, imm: 0 })
        }
        "li" => {
            arity(st, 2)?;
            let v = ctx.imm(&o[1], i32::MIN as i64, u32::MAX as i64)?;
            Ok(li_expand(ctx.reg(&o[0])?, v as u32 as i32))
        }
        "mv" => {
            arity(st, 2)?;
            one(Instr::OpImm { op: AluOp::Add, rd: ctx.reg(&o[0])?, rs1: ctx.reg(&o[1])?, imm: 0 })
        }
        "not" => {
            arity(st, 2)?;
            one(Instr::OpImm { op: AluOp::Xor, rd: ctx.reg(&o[0])?, rs1: ctx.reg(&o[1])?, imm: -1 })
        }
        "neg" => {
            arity(st, 2)?;
            one(Instr::Op { op: AluOp::Sub, rd: ctx.reg(&o[0])?, rs1: 0, rs2: ctx.reg(&o[1])? })
        }
        "j" => {
            arity(st, 1)?;
            one(Instr::Jal { rd: 0, offset: ctx.target(&o[0], 21)? })
        }
        "jr" => {
            arity(st, 1)?;
            one(Instr::Jalr { rd: 0, rs1: ctx.reg(&o[0])?, offset: 0 })
        }
        "ret" => {
            arity(st, 0)?;
            one(Instr::Jalr { rd: 0, rs1: 1, offset: 0 })
        }
        "call" => {
            arity(st, 1)?;
            one(Instr::Jal { rd: 1, offset: ctx.target(&o[0], 21)? })
        }
        "lui" | "auipc" => {
            arity(st, 2)?;
            let rd = ctx.reg(&o[0])?;
            let imm = (ctx.imm(&o[1], 0, 0xfffff)? << 12) as u32 as i32;
            one(if m == "lui" { Instr::Lui { rd, imm } } else { Instr::Auipc { rd, imm } })
        }
        "jal" => match o.len() {
            1 => one(Instr::Jal { rd: 1, offset: ctx.target(&o[0], 21)? }),
            _ => {
                arity(st, 2)?;
                one(Instr::Jal { rd: ctx.reg(&o[0])?, offset: ctx.target(&o[1], 21)? })
            }
        },
        "jalr" => match o.len() {
            1 => one(Instr::Jalr { rd: 1, rs1: ctx.reg(&o[0])?, offset: 0 }),
            2 => {
                let (offset, rs1) = ctx.mem(&o[1])?;
                one(Instr::Jalr { rd: ctx.reg(&o[0])?, rs1, offset })
            }
            _ => {
                arity(st, 3)?;
                let offset = ctx.imm(&o[2], -2048, 2047)? as i32;
                one(Instr::Jalr { rd: ctx.reg(&o[0])?, rs1: ctx.reg(&o[1])?, offset })
            }
        },
        "beqz" | "bnez" | "bltz" | "bgez" | "blez" | "bgtz" => {
            arity(st, 2)?;
            let r = ctx.reg(&o[0])?;
            let offset = ctx.target(&o[1], 13)?;
            let (op, rs1, rs2) = match m {
                "beqz" => (BranchOp::Beq, r, 0),
                "bnez" => (BranchOp::Bne, r, 0),
                "bltz" => (BranchOp::Blt, r, 0),
                "bgez" => (BranchOp::Bge, r, 0),
                "blez" => (BranchOp::Bge, 0, r),
                _ => (BranchOp::Blt, 0, r),
            };
            one(Instr::Branch { op, rs1, rs2, offset })
        }
        "bgt" | "ble" | "bgtu" | "bleu" => {
            arity(st, 3)?;
            let (a, b) = (ctx.reg(&o[0])?, ctx.reg(&o[1])?);
            let op = match m {
                "bgt" => BranchOp::Blt,
                "ble" => BranchOp::Bge,
                "bgtu" => BranchOp::Bltu,
                _ => BranchOp::Bgeu,
            };
            one(Instr::Branch { op, rs1: b, rs2: a, offset: ctx.target(&o[2], 13)? })
        }
        "fence" => one(Instr::Fence),
        "ecall" => one(Instr::Ecall),
        "ebreak" => one(Instr::Ebreak),
        "mret" => one(Instr::Mret),
        "wfi" => one(Instr::Wfi),
        "csrr" => {
            arity(st, 2)?;
            one(Instr::Csr { op: CsrOp::Rs, rd: ctx.reg(&o[0])?, csr: ctx.csr(&o[1])?, src: 0, imm: false })
        }
        "csrw" | "csrs" | "csrc" => {
            arity(st, 2)?;
            let op = csr_op(&format!("csrr{}", &m[3..])).unwrap();
            one(Instr::Csr { op, rd: 0, csr: ctx.csr(&o[0])?, src: ctx.reg(&o[1])?, imm: false })
        }
        "csrwi" | "csrsi" | "csrci" => {
            arity(st, 2)?;
            let op = csr_op(&format!("csrr{}", &m[3..4])).unwrap();
            let src = ctx.imm(&o[1], 0, 31)? as u8;
            one(Instr::Csr { op, rd: 0, csr: ctx.csr(&o[0])?, src, imm: true })
        }
        "csrrw" | "csrrs" | "csrrc" => {
            arity(st, 3)?;
            let op = csr_op(m).unwrap();
            let (rd, csr, src) = (ctx.reg(&o[0])?, ctx.csr(&o[1])?, ctx.reg(&o[2])?);
            one(Instr::Csr { op, rd, csr, src, imm: false })
        }
        "csrrwi" | "csrrsi" | "csrrci" => {
            arity(st, 3)?;
            let op = csr_op(&m[..5]).unwrap();
            let (rd, csr) = (ctx.reg(&o[0])?, ctx.csr(&o[1])?);
            one(Instr::Csr { op, rd, csr, src: ctx.imm(&o[2], 0, 31)? as u8, imm: true })
        }
        _ => {
            if let Some(op) = BranchOp::from_mnemonic(m) {
                arity(st, 3)?;
                let (rs1, rs2) = (ctx.reg(&o[0])?, ctx.reg(&o[1])?);
                return one(Instr::Branch { op, rs1, rs2, offset: ctx.target(&o[2], 13)? });
            }
            if let Some(op) = LoadOp::from_mnemonic(m) {
                arity(st, 2)?;
                let (offset, rs1) = ctx.mem(&o[1])?;
                return one(Instr::Load { op, rd: ctx.reg(&o[0])?, rs1, offset });
            }
            if let Some(op) = StoreOp::from_mnemonic(m) {
                arity(st, 2)?;
                let (offset, rs1) = ctx.mem(&o[1])?;
                return one(Instr::Store { op, rs1, rs2: ctx.reg(&o[0])?, offset });
            }
            if let Some((op, immediate)) = alu_from_mnemonic(m) {
                arity(st, 3)?;
                let (rd, rs1) = (ctx.reg(&o[0])?, ctx.reg(&o[1])?);
                if !immediate {
                    return one(Instr::Op { op, rd, rs1, rs2: ctx.reg(&o[2])? });
                }
                let imm = if matches!(op, AluOp::Sll | AluOp::Srl | AluOp::Sra) {
                    ctx.imm(&o[2], 0, 31)?
                } else {
                    ctx.imm(&o[2], -2048, 2047)?
                };
                return one(Instr::OpImm { op, rd, rs1, imm: imm as i32 });
            }
            Err(parse_err(st.line, format!("unknown mnemonic `{m}`")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Loc {
    segment: usize,
    word: usize,
    limit: usize,
}

enum Item {
    Code(Stmt),
    Word(u32),
}

pub fn assemble(src: &str) -> Result<Program> {
    // pass 1: layout and labels
    let mut labels: HashMap<String, (usize, u32)> = HashMap::new();
    let mut placed: Vec<(Loc, Item)> = vec![];
    let mut loc = Loc { segment: 0, word: 0, limit: IRAM_WORDS };
    let mut nsegments = 1;
    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let (names, stmt) = split_line(raw, line)?;
        for name in names {
            if labels.insert(name.clone(), (loc.segment, (loc.word * 4) as u32)).is_some() {
                return Err(Error::DuplicateLabel(name));
            }
        }
        let Some(st) = stmt else { continue };
        let directive_arg = |lo: i64, hi: i64| -> Result<i64> {
            arity(&st, 1)?;
            let v =
                parse_int(&st.operands[0]).ok_or_else(|| parse_err(line, format!("bad value `{}`", st.operands[0])))?;
            if v < lo || v > hi {
                return Err(Error::Range { line, value: v });
            }
            Ok(v)
        };
        let words = match st.mnemonic.as_str() {
            ".segment" => {
                let n = directive_arg(0, 4095)? as usize;
                loc = Loc { segment: n, word: 0, limit: IRAM_WORDS };
                nsegments = nsegments.max(n + 1);
                continue;
            }
            ".hart" => {
                let h = directive_arg(0, (IRAM_WORDS / HART_REGION_WORDS - 1) as i64)? as usize;
                loc.word = h * HART_REGION_WORDS;
                loc.limit = loc.word + HART_REGION_WORDS;
                continue;
            }
            ".org" => {
                loc.word = directive_arg(0, IRAM_WORDS as i64 - 1)? as usize;
                continue;
            }
            ".word" => {
                let v = directive_arg(i32::MIN as i64, u32::MAX as i64)?;
                placed.push((loc, Item::Word(v as u32)));
                1
            }
            m if m.starts_with('.') => return Err(parse_err(line, format!("unknown directive `{m}`"))),
            _ => {
                let n = size_of(&st)?;
                placed.push((loc, Item::Code(st)));
                n
            }
        };
        loc.word += words;
        if loc.word > loc.limit {
            return Err(Error::CapacityExceeded(format!(
                "line {line}: code runs past word {} of its region",
                loc.limit
            )));
        }
    }
    // pass 2: encode
    let mut segments = vec![vec![0u32; IRAM_WORDS]; nsegments];
    for (at, item) in placed {
        match item {
            Item::Word(w) => segments[at.segment][at.word] = w,
            Item::Code(st) => {
                let ctx = Ctx { line: st.line, pc: (at.word * 4) as u32, labels: &labels };
                for (k, ins) in lower(&st, &ctx)?.iter().enumerate() {
                    segments[at.segment][at.word + k] = encode(ins);
                }
            }
        }
    }
    Ok(Program { segments, labels })
}
