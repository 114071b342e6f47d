//! Architectural state and the sequential reference interpreter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{decode, Decoded, Fields, MemoryImage, Mnemonic};

pub const EXCEPTION_VECTOR: u32 = 0x8000_0080;
/// BREAK with this code stops the machine instead of trapping.
pub const HALT_CODE: u32 = 0x3FF;

pub const CP0_STATUS: usize = 12;
pub const CP0_CAUSE: usize = 13;
pub const CP0_EPC: usize = 14;

/// Writable data windows outside the loaded image: `[start, end)`.
pub const RAM_WINDOWS: [(u32, u32); 2] = [(0x1000_0000, 0x1010_0000), (0x7FF0_0000, 0x8000_0000)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExcCode {
    Int = 0,
    AdEL = 4,
    AdES = 5,
    Sys = 8,
    Bp = 9,
    RI = 10,
    Ov = 12,
}

impl ExcCode {
    pub const ALL: [ExcCode; 7] =
        [ExcCode::Int, ExcCode::AdEL, ExcCode::AdES, ExcCode::Sys, ExcCode::Bp, ExcCode::RI, ExcCode::Ov];

    pub fn from_code(code: u32) -> Option<ExcCode> {
        ExcCode::ALL.iter().copied().find(|c| *c as u32 == code)
    }

    pub fn is_address_error(self) -> bool {
        matches!(self, ExcCode::AdEL | ExcCode::AdES)
    }
}

impl fmt::Display for ExcCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DelaySlot {
    /// One instruction after every taken transfer executes before the target.
    #[default]
    On,
    Off,
}

impl DelaySlot {
    /// Return address written by linking transfers at `pc`.
    pub fn link_address(self, pc: u32) -> u32 {
        match self {
            DelaySlot::On => pc.wrapping_add(8),
            DelaySlot::Off => pc.wrapping_add(4),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchError {
    #[error("instruction fetch from unmapped address {0:#010x}")]
    UnmappedFetch(u32),
    #[error("data access at {addr:#010x} by instruction at {pc:#010x} is unmapped")]
    UnmappedData { pc: u32, addr: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchState {
    pub regs: [u32; 32],
    pub hi: u32,
    pub lo: u32,
    pub pc: u32,
    pub cp0: [u32; 32],
}

impl ArchState {
    pub fn reset(entry: u32) -> Self {
        ArchState { regs: [0; 32], hi: 0, lo: 0, pc: entry, cp0: [0; 32] }
    }

    pub fn status(&self) -> u32 {
        self.cp0[CP0_STATUS]
    }

    pub fn cause(&self) -> u32 {
        self.cp0[CP0_CAUSE]
    }

    pub fn epc(&self) -> u32 {
        self.cp0[CP0_EPC]
    }

    pub fn interrupts_enabled(&self) -> bool {
        self.status() & 1 != 0
    }

    pub fn user_mode(&self) -> bool {
        self.status() & 2 != 0
    }

    pub fn set_reg(&mut self, r: u8, v: u32) {
        if r != 0 {
            self.regs[r as usize] = v;
        }
    }

    /// Register file, HI/LO and CP0; the program counter is excluded.
    pub fn same_registers(&self, other: &ArchState) -> bool {
        self.regs == other.regs && self.hi == other.hi && self.lo == other.lo && self.cp0 == other.cp0
    }

    /// Text dump: 32 registers, HI/LO, CP0 status/cause/EPC.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (r, v) in self.regs.iter().enumerate() {
            out.push_str(&format!("${r:<2} = {v:08x}{}", if r % 4 == 3 { "\n" } else { "  " }));
        }
        out.push_str(&format!("hi  = {:08x}  lo  = {:08x}  pc  = {:08x}\n", self.hi, self.lo, self.pc));
        out.push_str(&format!(
            "status = {:08x}  cause = {:08x}  epc = {:08x}\n",
            self.status(),
            self.cause(),
            self.epc()
        ));
        out
    }
}

/// Cause value recorded for an exception, with the interrupt pin for `Int`.
pub fn cause_value(code: ExcCode, pin: Option<u8>) -> u32 {
    ((code as u32) << 2) | pin.map_or(0, |p| 1 << (10 + p))
}

/// Push the KU/IE stack: current mode becomes kernel with interrupts off.
pub fn push_status(status: u32) -> u32 {
    (status & !0x3F) | ((status << 2) & 0x3C)
}

/// Pop the KU/IE stack: bits 5..0 shift right by two.
pub fn pop_status(status: u32) -> u32 {
    (status & !0x3F) | ((status & 0x3F) >> 2)
}

/// Record an exception in CP0 and redirect to the vector.
pub fn raise_exception(state: &mut ArchState, code: ExcCode, faulting_pc: u32, in_delay_slot: bool) {
    raise_with_pin(state, code, faulting_pc, in_delay_slot, None);
}

fn raise_with_pin(state: &mut ArchState, code: ExcCode, faulting_pc: u32, in_slot: bool, pin: Option<u8>) {
    state.cp0[CP0_CAUSE] = cause_value(code, pin);
    state.cp0[CP0_EPC] = if in_slot { faulting_pc.wrapping_sub(4) } else { faulting_pc };
    state.cp0[CP0_STATUS] = push_status(state.cp0[CP0_STATUS]);
    state.pc = EXCEPTION_VECTOR;
}

pub fn rfe(state: &mut ArchState) {
    state.cp0[CP0_STATUS] = pop_status(state.cp0[CP0_STATUS]);
}

/// Image-backed memory plus the RAM windows; everything else is unmapped.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    image: MemoryImage,
}

impl Memory {
    pub fn new(image: MemoryImage) -> Self {
        Memory { image }
    }

    pub fn image(&self) -> &MemoryImage {
        &self.image
    }

    pub fn into_image(self) -> MemoryImage {
        self.image
    }

    pub fn is_mapped(&self, addr: u32) -> bool {
        self.image.contains(addr) || RAM_WINDOWS.iter().any(|&(lo, hi)| (lo..hi).contains(&addr))
    }

    pub fn fetch(&self, pc: u32) -> Option<u32> {
        (pc % 4 == 0 && self.image.contains(pc)).then(|| self.image.word(pc))
    }

    pub fn read_word(&self, addr: u32) -> Option<u32> {
        self.is_mapped(addr).then(|| self.image.word(addr))
    }

    pub fn write_merge(&mut self, addr: u32, value: u32, mask: u32) -> bool {
        if !self.is_mapped(addr) {
            return false;
        }
        self.image.merge_word(addr, value, mask);
        true
    }

    /// Words that differ from `base` (including newly written ones).
    pub fn diff_from(&self, base: &MemoryImage) -> BTreeMap<u32, u32> {
        self.image.words().filter(|&(a, w)| !base.contains(a) || base.word(a) != w).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetireRecord {
    pub addr: u32,
    /// `None` for a reserved encoding.
    pub mnemonic: Option<Mnemonic>,
    pub took_branch: bool,
    pub exception: Option<ExcCode>,
}

impl RetireRecord {
    pub fn mnemonic_name(&self) -> &'static str {
        self.mnemonic.map_or("reserved", |m| m.name())
    }

    pub fn is_halt(&self, word: u32) -> bool {
        self.mnemonic == Some(Mnemonic::Break) && self.exception.is_none() && (word >> 6) & 0xFFFFF == HALT_CODE
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    addr: u32,
    mnemonic: &'a str,
    branch: bool,
    exc: Option<ExcCode>,
}

/// Retire trace as JSON lines `{addr, mnemonic, branch, exc}`.
pub fn write_trace_jsonl(trace: &[RetireRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in trace {
        let line = TraceLine { addr: r.addr, mnemonic: r.mnemonic_name(), branch: r.took_branch, exc: r.exception };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptRecord {
    /// Number of instructions retired before the interrupt was taken.
    pub after_retired: usize,
    pub pin: u8,
    pub epc: u32,
}

/// Oracle machine: architectural state plus the pending delayed transfer.
#[derive(Clone, Debug)]
pub struct Machine {
    pub state: ArchState,
    pub memory: Memory,
    pub mode: DelaySlot,
    delayed_target: Option<u32>,
    pending_pins: BTreeSet<u8>,
    pub halted: bool,
}

enum Flow {
    Next,
    Transfer(u32),
    Trap(ExcCode),
}

impl Machine {
    pub fn new(image: MemoryImage, mode: DelaySlot) -> Self {
        let state = ArchState::reset(image.entry);
        Machine { state, memory: Memory::new(image), mode, delayed_target: None, pending_pins: BTreeSet::new(), halted: false }
    }

    pub fn in_delay_slot(&self) -> bool {
        self.delayed_target.is_some()
    }

    pub fn assert_pin(&mut self, pin: u8) {
        self.pending_pins.insert(pin);
    }

    /// Take the lowest pending pin when enabled and not between a transfer and its slot.
    pub fn poll_interrupt(&mut self) -> Option<(u8, u32)> {
        if !self.state.interrupts_enabled() || self.in_delay_slot() {
            return None;
        }
        let pin = self.pending_pins.pop_first()?;
        let epc = self.state.pc;
        raise_with_pin(&mut self.state, ExcCode::Int, epc, false, Some(pin));
        Some((pin, epc))
    }

    pub fn step(&mut self) -> Result<RetireRecord, ArchError> {
        oracle_step(self)
    }
}

fn overflow_add(a: u32, b: u32) -> Option<u32> {
    (a as i32).checked_add(b as i32).map(|v| v as u32)
}

fn overflow_sub(a: u32, b: u32) -> Option<u32> {
    (a as i32).checked_sub(b as i32).map(|v| v as u32)
}

/// Execute one instruction at `machine.state.pc`.
pub fn oracle_step(m: &mut Machine) -> Result<RetireRecord, ArchError> {
    let pc = m.state.pc;
    let word = m.memory.fetch(pc).ok_or(ArchError::UnmappedFetch(pc))?;
    let in_slot = m.delayed_target.is_some();
    let (mnemonic, flow) = match decode(word) {
        Decoded::Reserved => (None, Flow::Trap(ExcCode::RI)),
        Decoded::Insn(insn) => {
            if insn.mnemonic == Mnemonic::Break && insn.fields.code() == HALT_CODE {
                m.halted = true;
                return Ok(RetireRecord { addr: pc, mnemonic: Some(Mnemonic::Break), took_branch: false, exception: None });
            }
            (Some(insn.mnemonic), execute(m, pc, insn.mnemonic, &insn.fields)?)
        }
    };
    let mut record = RetireRecord { addr: pc, mnemonic, took_branch: false, exception: None };
    match flow {
        Flow::Trap(code) => {
            m.delayed_target = None;
            raise_exception(&mut m.state, code, pc, in_slot);
            record.exception = Some(code);
        }
        Flow::Transfer(target) => {
            record.took_branch = true;
            match m.mode {
                DelaySlot::On => {
                    m.delayed_target = Some(target);
                    m.state.pc = pc.wrapping_add(4);
                }
                DelaySlot::Off => m.state.pc = target,
            }
        }
        Flow::Next => {
            m.state.pc = match m.delayed_target.take() {
                Some(t) => t,
                None => pc.wrapping_add(4),
            };
        }
    }
    Ok(record)
}

fn execute(m: &mut Machine, pc: u32, mn: Mnemonic, f: &Fields) -> Result<Flow, ArchError> {
    use Mnemonic::*;
    let s = &mut m.state;
    let rs = s.regs[f.rs as usize];
    let rt = s.regs[f.rt as usize];
    let branch_to = pc.wrapping_add(4).wrapping_add((f.simm() as u32) << 2);
    let taken = |cond: bool| if cond { Flow::Transfer(branch_to) } else { Flow::Next };
    let link = m.mode.link_address(pc);
    let flow = match mn {
        Nop => Flow::Next,
        Add => match overflow_add(rs, rt) {
            Some(v) => { s.set_reg(f.rd, v); Flow::Next }
            None => Flow::Trap(ExcCode::Ov),
        },
        Sub => match overflow_sub(rs, rt) {
            Some(v) => { s.set_reg(f.rd, v); Flow::Next }
            None => Flow::Trap(ExcCode::Ov),
        },
        Addi => match overflow_add(rs, f.sext()) {
            Some(v) => { s.set_reg(f.rt, v); Flow::Next }
            None => Flow::Trap(ExcCode::Ov),
        },
        Addu => { s.set_reg(f.rd, rs.wrapping_add(rt)); Flow::Next }
        Subu => { s.set_reg(f.rd, rs.wrapping_sub(rt)); Flow::Next }
        Addiu => { s.set_reg(f.rt, rs.wrapping_add(f.sext())); Flow::Next }
        And => { s.set_reg(f.rd, rs & rt); Flow::Next }
        Or => { s.set_reg(f.rd, rs | rt); Flow::Next }
        Xor => { s.set_reg(f.rd, rs ^ rt); Flow::Next }
        Nor => { s.set_reg(f.rd, !(rs | rt)); Flow::Next }
        Andi => { s.set_reg(f.rt, rs & f.zext()); Flow::Next }
        Ori => { s.set_reg(f.rt, rs | f.zext()); Flow::Next }
        Xori => { s.set_reg(f.rt, rs ^ f.zext()); Flow::Next }
        Lui => { s.set_reg(f.rt, f.zext() << 16); Flow::Next }
        Slt => { s.set_reg(f.rd, ((rs as i32) < (rt as i32)) as u32); Flow::Next }
        Sltu => { s.set_reg(f.rd, (rs < rt) as u32); Flow::Next }
        Slti => { s.set_reg(f.rt, ((rs as i32) < f.simm()) as u32); Flow::Next }
        Sltiu => { s.set_reg(f.rt, (rs < f.sext()) as u32); Flow::Next }
        Sll => { s.set_reg(f.rd, rt << f.sa); Flow::Next }
        Srl => { s.set_reg(f.rd, rt >> f.sa); Flow::Next }
        Sra => { s.set_reg(f.rd, ((rt as i32) >> f.sa) as u32); Flow::Next }
        Sllv => { s.set_reg(f.rd, rt << (rs & 31)); Flow::Next }
        Srlv => { s.set_reg(f.rd, rt >> (rs & 31)); Flow::Next }
        Srav => { s.set_reg(f.rd, ((rt as i32) >> (rs & 31)) as u32); Flow::Next }
        Mult => {
            let p = (rs as i32 as i64) * (rt as i32 as i64);
            (s.hi, s.lo) = ((p >> 32) as u32, p as u32);
            Flow::Next
        }
        Multu => {
            let p = (rs as u64) * (rt as u64);
            (s.hi, s.lo) = ((p >> 32) as u32, p as u32);
            Flow::Next
        }
        Div => {
            (s.hi, s.lo) = if rt == 0 {
                (rs, u32::MAX)
            } else {
                let (a, b) = (rs as i32, rt as i32);
                (a.wrapping_rem(b) as u32, a.wrapping_div(b) as u32)
            };
            Flow::Next
        }
        Divu => {
            (s.hi, s.lo) = if rt == 0 { (rs, u32::MAX) } else { (rs % rt, rs / rt) };
            Flow::Next
        }
        Mfhi => { s.set_reg(f.rd, s.hi); Flow::Next }
        Mflo => { s.set_reg(f.rd, s.lo); Flow::Next }
        Mthi => { s.hi = rs; Flow::Next }
        Mtlo => { s.lo = rs; Flow::Next }
        J => Flow::Transfer((pc.wrapping_add(4) & 0xF000_0000) | (f.target << 2)),
        Jal => {
            s.set_reg(31, link);
            Flow::Transfer((pc.wrapping_add(4) & 0xF000_0000) | (f.target << 2))
        }
        Jr => Flow::Transfer(rs),
        Jalr => {
            s.set_reg(f.rd, link);
            Flow::Transfer(rs)
        }
        Beq => taken(rs == rt),
        Bne => taken(rs != rt),
        Blez => taken(rs as i32 <= 0),
        Bgtz => taken(rs as i32 > 0),
        Bltz => taken((rs as i32) < 0),
        Bgez => taken(rs as i32 >= 0),
        Bltzal => {
            s.set_reg(31, link);
            taken((rs as i32) < 0)
        }
        Bgezal => {
            s.set_reg(31, link);
            taken(rs as i32 >= 0)
        }
        Syscall => Flow::Trap(ExcCode::Sys),
        Break => Flow::Trap(ExcCode::Bp),
        Mfc0 => { s.set_reg(f.rt, s.cp0[f.rd as usize]); Flow::Next }
        Mtc0 => { s.cp0[f.rd as usize] = rt; Flow::Next }
        Rfe => { rfe(s); Flow::Next }
        Lb | Lbu | Lh | Lhu | Lw | Lwl | Lwr => return load(m, pc, mn, f),
        Sb | Sh | Sw | Swl | Swr => return store(m, pc, mn, f),
    };
    Ok(flow)
}

fn alignment_of(mn: Mnemonic) -> u32 {
    use Mnemonic::*;
    match mn {
        Lw | Sw => 4,
        Lh | Lhu | Sh => 2,
        _ => 1,
    }
}

fn address_fault(state: &ArchState, mn: Mnemonic, addr: u32) -> bool {
    addr % alignment_of(mn) != 0 || (state.user_mode() && addr >= 0x8000_0000)
}

fn load(m: &mut Machine, pc: u32, mn: Mnemonic, f: &Fields) -> Result<Flow, ArchError> {
    use Mnemonic::*;
    let addr = m.state.regs[f.rs as usize].wrapping_add(f.sext());
    if address_fault(&m.state, mn, addr) {
        return Ok(Flow::Trap(ExcCode::AdEL));
    }
    let word = m.memory.read_word(addr).ok_or(ArchError::UnmappedData { pc, addr })?;
    let old = m.state.regs[f.rt as usize];
    let byte = (word >> ((3 - (addr & 3)) * 8)) as u8;
    let half = (word >> ((2 - (addr & 2)) * 8)) as u16;
    let o = addr & 3;
    let value = match mn {
        Lb => byte as i8 as i32 as u32,
        Lbu => byte as u32,
        Lh => half as i16 as i32 as u32,
        Lhu => half as u32,
        Lw => word,
        // Bytes from addr to the end of the word fill rt from the left.
        Lwl => (word << (8 * o)) | (old & low_mask(8 * o)),
        // Bytes from the start of the word to addr fill rt from the right.
        Lwr => (word >> (8 * (3 - o))) | (old & !(u32::MAX >> (8 * (3 - o)))),
        _ => unreachable!(),
    };
    m.state.set_reg(f.rt, value);
    Ok(Flow::Next)
}

fn low_mask(bits: u32) -> u32 {
    if bits >= 32 { u32::MAX } else { (1u32 << bits) - 1 }
}

fn store(m: &mut Machine, pc: u32, mn: Mnemonic, f: &Fields) -> Result<Flow, ArchError> {
    use Mnemonic::*;
    let addr = m.state.regs[f.rs as usize].wrapping_add(f.sext());
    if address_fault(&m.state, mn, addr) {
        return Ok(Flow::Trap(ExcCode::AdES));
    }
    let rt = m.state.regs[f.rt as usize];
    let o = addr & 3;
    let (value, mask) = match mn {
        Sb => (rt << ((3 - o) * 8), 0xFF << ((3 - o) * 8)),
        Sh => (rt << ((2 - (addr & 2)) * 8), 0xFFFF << ((2 - (addr & 2)) * 8)),
        Sw => (rt, u32::MAX),
        Swl => (rt >> (8 * o), u32::MAX >> (8 * o)),
        Swr => (rt << (8 * (3 - o)), u32::MAX << (8 * (3 - o))),
        _ => unreachable!(),
    };
    if !m.memory.write_merge(addr, value, mask) {
        return Err(ArchError::UnmappedData { pc, addr });
    }
    Ok(Flow::Next)
}

#[derive(Clone, Debug)]
pub struct OracleRun {
    pub state: ArchState,
    pub memory: Memory,
    pub trace: Vec<RetireRecord>,
    pub interrupts: Vec<InterruptRecord>,
    pub halted: bool,
}

/// Run until the halt BREAK or `max_steps` retired instructions.
/// Each `(step, pin)` asserts `pin` once `step` instructions have retired.
pub fn oracle_run(
    image: &MemoryImage,
    max_steps: usize,
    mode: DelaySlot,
    interrupt_schedule: &[(usize, u8)],
) -> Result<OracleRun, ArchError> {
    let mut m = Machine::new(image.clone(), mode);
    let mut schedule: Vec<(usize, u8)> = interrupt_schedule.to_vec();
    schedule.sort();
    let mut next_irq = 0;
    let mut trace = Vec::new();
    let mut interrupts = Vec::new();
    while !m.halted && trace.len() < max_steps {
        while next_irq < schedule.len() && schedule[next_irq].0 <= trace.len() {
            m.assert_pin(schedule[next_irq].1);
            next_irq += 1;
        }
        if let Some((pin, epc)) = m.poll_interrupt() {
            interrupts.push(InterruptRecord { after_retired: trace.len(), pin, epc });
        }
        trace.push(m.step()?);
    }
    Ok(OracleRun { halted: m.halted, state: m.state, memory: m.memory, trace, interrupts })
}
