//! Two-pass assembler for the supported MIPS subset.
//!
//! Source syntax: one statement per line, `#` comments, `label:` prefixes,
//! directives `.text [addr]`, `.data [addr]`, `.org addr`, `.word v, ...`,
//! `.space bytes`. Registers are `$0`..`$31` or their conventional names.
//! Immediates accept decimal, `0x` hex, labels, `%hi(label)` and `%lo(label)`.
//! Execution starts at `main` when defined, otherwise at the first text word.

use std::collections::HashMap;

use thiserror::Error;

use super::{encode, Fields, Instruction, MemoryImage, Mnemonic, Syntax};

pub const TEXT_BASE: u32 = 0x0040_0000;
pub const DATA_BASE: u32 = 0x1000_0000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: target out of range ({detail})")]
    OffsetOutOfRange { line: usize, detail: String },
    #[error("line {line}: address {addr:#x} is not word aligned")]
    MisalignedOrg { line: usize, addr: u32 },
    #[error("line {line}: immediate {value} does not fit in 16 bits")]
    ImmediateOutOfRange { line: usize, value: i64 },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

const REG_NAMES: [&str; 32] = [
    "zero", "at", "v0", "v1", "a0", "a1", "a2", "a3", "t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7", "s0",
    "s1", "s2", "s3", "s4", "s5", "s6", "s7", "t8", "t9", "k0", "k1", "gp", "sp", "fp", "ra",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
}

enum Stmt<'a> {
    Insn { addr: u32, mnemonic: Mnemonic, operands: Vec<&'a str> },
    Word { addr: u32, values: Vec<&'a str> },
}

struct Located<'a> {
    line: usize,
    stmt: Stmt<'a>,
}

pub fn assemble(source: &str) -> Result<MemoryImage, AsmError> {
    let mut labels: HashMap<&str, u32> = HashMap::new();
    let mut stmts = Vec::new();
    let mut section = Section::Text;
    let mut text_pc = TEXT_BASE;
    let mut data_pc = DATA_BASE;
    let mut first_text: Option<u32> = None;

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let serr = |message: String| AsmError::Syntax { line, message };
        let mut body = raw.split('#').next().unwrap_or("").trim();
        while let Some((head, rest)) = body.split_once(':') {
            let head = head.trim();
            if !is_ident(head) {
                break;
            }
            let pc = if section == Section::Text { text_pc } else { data_pc };
            if labels.insert(head, pc).is_some() {
                return Err(AsmError::DuplicateLabel { line, label: head.to_string() });
            }
            body = rest.trim();
        }
        if body.is_empty() {
            continue;
        }
        let (word, rest) = match body.split_once(char::is_whitespace) {
            Some((w, r)) => (w, r.trim()),
            None => (body, ""),
        };
        let operands: Vec<&str> =
            if rest.is_empty() { Vec::new() } else { rest.split(',').map(str::trim).collect() };
        let pc = if section == Section::Text { &mut text_pc } else { &mut data_pc };
        match word {
            ".text" | ".data" => {
                section = if word == ".text" { Section::Text } else { Section::Data };
                if let Some(a) = operands.first() {
                    let addr = parse_int(a).ok_or_else(|| serr(format!("bad address `{a}`")))? as u32;
                    if addr % 4 != 0 {
                        return Err(AsmError::MisalignedOrg { line, addr });
                    }
                    if section == Section::Text { text_pc = addr } else { data_pc = addr }
                }
            }
            ".org" => {
                let a = operands.first().ok_or_else(|| serr(".org needs an address".into()))?;
                let addr = parse_int(a).ok_or_else(|| serr(format!("bad address `{a}`")))? as u32;
                if addr % 4 != 0 {
                    return Err(AsmError::MisalignedOrg { line, addr });
                }
                *pc = addr;
            }
            ".word" => {
                if operands.is_empty() {
                    return Err(serr(".word needs a value".into()));
                }
                stmts.push(Located { line, stmt: Stmt::Word { addr: *pc, values: operands.clone() } });
                *pc = pc.wrapping_add(4 * operands.len() as u32);
            }
            ".space" => {
                let n = operands.first().and_then(|s| parse_int(s)).ok_or_else(|| serr(".space needs a size".into()))?;
                if n < 0 || n % 4 != 0 {
                    return Err(serr(".space size must be a non-negative multiple of 4".into()));
                }
                let words = vec!["0"; (n / 4) as usize];
                if !words.is_empty() {
                    stmts.push(Located { line, stmt: Stmt::Word { addr: *pc, values: words } });
                }
                *pc = pc.wrapping_add(n as u32);
            }
            ".globl" | ".global" | ".set" => {}
            _ => {
                let mnemonic = Mnemonic::from_name(word).ok_or_else(|| serr(format!("unknown mnemonic `{word}`")))?;
                if section == Section::Text && first_text.is_none() {
                    first_text = Some(*pc);
                }
                stmts.push(Located { line, stmt: Stmt::Insn { addr: *pc, mnemonic, operands } });
                *pc = pc.wrapping_add(4);
            }
        }
    }

    let entry = labels.get("main").copied().or(first_text).unwrap_or(TEXT_BASE);
    let mut image = MemoryImage::new(entry);
    let ctx = Resolver { labels: &labels };
    for Located { line, stmt } in &stmts {
        match stmt {
            Stmt::Word { addr, values } => {
                for (i, v) in values.iter().enumerate() {
                    let value = ctx.value(v, *line)?;
                    if !(-(1i64 << 31)..(1i64 << 32)).contains(&value) {
                        return Err(AsmError::Syntax { line: *line, message: format!("value `{v}` exceeds 32 bits") });
                    }
                    image.set_word(addr + 4 * i as u32, value as u32).expect("aligned");
                }
            }
            Stmt::Insn { addr, mnemonic, operands } => {
                let insn = ctx.instruction(*addr, *mnemonic, operands, *line)?;
                image.set_word(*addr, encode(&insn)).expect("aligned");
            }
        }
    }
    Ok(image)
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, s),
    };
    let v = if let Some(h) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else {
        digits.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

pub fn parse_register(s: &str) -> Option<u8> {
    let name = s.trim().strip_prefix('$')?;
    if let Ok(n) = name.parse::<u8>() {
        return (n < 32).then_some(n);
    }
    let name = if name == "s8" { "fp" } else { name };
    REG_NAMES.iter().position(|r| *r == name).map(|n| n as u8)
}

struct Resolver<'a> {
    labels: &'a HashMap<&'a str, u32>,
}

impl Resolver<'_> {
    fn label(&self, name: &str, line: usize) -> Result<u32, AsmError> {
        self.labels
            .get(name)
            .copied()
            .ok_or_else(|| AsmError::UndefinedLabel { line, label: name.to_string() })
    }

    /// Integer literal, label address, `%hi(x)` or `%lo(x)`.
    fn value(&self, s: &str, line: usize) -> Result<i64, AsmError> {
        let s = s.trim();
        if let Some(v) = parse_int(s) {
            return Ok(v);
        }
        for (prefix, hi) in [("%hi(", true), ("%lo(", false)] {
            if let Some(inner) = s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')) {
                let v = self.value(inner, line)? as u32;
                return Ok(if hi { (v >> 16) as i64 } else { (v & 0xFFFF) as i64 });
            }
        }
        if is_ident(s) {
            return Ok(self.label(s, line)? as i64);
        }
        Err(AsmError::Syntax { line, message: format!("bad operand `{s}`") })
    }

    fn imm16(&self, s: &str, line: usize) -> Result<u16, AsmError> {
        let v = self.value(s, line)?;
        if !(-32768..=65535).contains(&v) {
            return Err(AsmError::ImmediateOutOfRange { line, value: v });
        }
        Ok(v as u16)
    }

    fn instruction(&self, pc: u32, m: Mnemonic, ops: &[&str], line: usize) -> Result<Instruction, AsmError> {
        let serr = |message: String| AsmError::Syntax { line, message };
        let want = |n: usize| {
            if ops.len() == n {
                Ok(())
            } else {
                Err(serr(format!("`{m}` takes {n} operand(s), got {}", ops.len())))
            }
        };
        let reg = |i: usize| parse_register(ops[i]).ok_or_else(|| serr(format!("bad register `{}`", ops[i])));
        let mut f = Fields::default();
        match m.syntax() {
            Syntax::None => want(0)?,
            Syntax::Rrr => {
                want(3)?;
                (f.rd, f.rs, f.rt) = (reg(0)?, reg(1)?, reg(2)?);
            }
            Syntax::Shift => {
                want(3)?;
                (f.rd, f.rt) = (reg(0)?, reg(1)?);
                let sa = self.value(ops[2], line)?;
                if !(0..32).contains(&sa) {
                    return Err(serr(format!("shift amount {sa} out of range")));
                }
                f.sa = sa as u8;
            }
            Syntax::ShiftV => {
                want(3)?;
                (f.rd, f.rt, f.rs) = (reg(0)?, reg(1)?, reg(2)?);
            }
            Syntax::RsRt => {
                want(2)?;
                (f.rs, f.rt) = (reg(0)?, reg(1)?);
            }
            Syntax::Rd => {
                want(1)?;
                f.rd = reg(0)?;
            }
            Syntax::Rs => {
                want(1)?;
                f.rs = reg(0)?;
            }
            Syntax::Jalr => match ops.len() {
                1 => (f.rd, f.rs) = (31, reg(0)?),
                _ => {
                    want(2)?;
                    (f.rd, f.rs) = (reg(0)?, reg(1)?);
                }
            },
            Syntax::Imm => {
                want(3)?;
                (f.rt, f.rs) = (reg(0)?, reg(1)?);
                f.imm = self.imm16(ops[2], line)?;
            }
            Syntax::Lui => {
                want(2)?;
                f.rt = reg(0)?;
                f.imm = self.imm16(ops[1], line)?;
            }
            Syntax::Mem => {
                want(2)?;
                f.rt = reg(0)?;
                let (off, base) = ops[1]
                    .strip_suffix(')')
                    .and_then(|s| s.rsplit_once('('))
                    .ok_or_else(|| serr(format!("expected `offset($base)`, got `{}`", ops[1])))?;
                f.rs = parse_register(base).ok_or_else(|| serr(format!("bad register `{base}`")))?;
                f.imm = if off.trim().is_empty() { 0 } else { self.imm16(off, line)? };
            }
            Syntax::Branch2 | Syntax::Branch1 => {
                let two = m.syntax() == Syntax::Branch2;
                want(if two { 3 } else { 2 })?;
                f.rs = reg(0)?;
                if two {
                    f.rt = reg(1)?;
                }
                let target = self.value(ops[ops.len() - 1], line)?;
                let delta = target - (pc as i64 + 4);
                if delta % 4 != 0 {
                    return Err(AsmError::OffsetOutOfRange { line, detail: format!("unaligned target {target:#x}") });
                }
                let words = delta / 4;
                if !(-(1 << 15)..(1 << 15)).contains(&words) {
                    return Err(AsmError::OffsetOutOfRange { line, detail: format!("{words} words") });
                }
                f.imm = words as i16 as u16;
                if m.opcode() == 1 {
                    f.rt = m.selector() as u8;
                }
            }
            Syntax::Jump => {
                want(1)?;
                let target = self.value(ops[0], line)?;
                let target = u32::try_from(target)
                    .map_err(|_| AsmError::OffsetOutOfRange { line, detail: format!("target {target}") })?;
                if target % 4 != 0 || (target ^ pc.wrapping_add(4)) & 0xF000_0000 != 0 {
                    return Err(AsmError::OffsetOutOfRange { line, detail: format!("target {target:#x} outside region") });
                }
                f.target = (target >> 2) & 0x03FF_FFFF;
            }
            Syntax::Code => {
                let code = match ops.len() {
                    0 => 0,
                    1 => self.value(ops[0], line)?,
                    _ => return Err(serr(format!("`{m}` takes at most one operand"))),
                };
                if !(0..1 << 20).contains(&code) {
                    return Err(serr(format!("code {code} exceeds 20 bits")));
                }
                let c = code as u32;
                (f.rs, f.rt, f.rd, f.sa) = ((c >> 15) as u8 & 31, (c >> 10) as u8 & 31, (c >> 5) as u8 & 31, c as u8 & 31);
            }
            Syntax::Cop => {
                want(2)?;
                f.rt = reg(0)?;
                f.rd = parse_register(ops[1])
                    .or_else(|| parse_int(ops[1]).filter(|v| (0..32).contains(v)).map(|v| v as u8))
                    .ok_or_else(|| serr(format!("bad CP0 register `{}`", ops[1])))?;
            }
        }
        Ok(Instruction::new(m, f))
    }
}
