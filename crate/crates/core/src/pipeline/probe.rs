use std::collections::VecDeque;

use crate::arch::{InterruptRecord, RetireRecord};
use crate::hazards::HazardKind;
use crate::isa::Mnemonic;

/// Observation record for one item DeCode sends down the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeEntry {
    pub pc: u32,
    pub mnemonic: Option<Mnemonic>,
    /// Set by DeCode for J/JAL; EX-resolved transfers travel in the control word.
    pub took: bool,
    /// Registers named on RegRead.
    pub reads: (u8, u8),
    /// Op0/Op1 as EX used them; unset for items EX discarded.
    pub operands: Option<(u32, u32)>,
}

/// Operands of one retired instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperandRecord {
    pub pc: u32,
    pub reads: (u8, u8),
    pub values: (u32, u32),
}

/// An architectural side effect and the instruction that caused it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Effect {
    Store { pc: u32, addr: u32 },
    RegWrite { pc: u32, rd: u8 },
}

impl Effect {
    pub fn pc(self) -> u32 {
        match self {
            Effect::Store { pc, .. } | Effect::RegWrite { pc, .. } => pc,
        }
    }
}

/// Re-entry decision the AAU made at the end of a drain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Backpoint {
    pub last_issued: u32,
    pub pending: Option<(HazardKind, u32)>,
    pub epc: u32,
    /// False when interrupts were disabled by the time the drain finished.
    pub taken: bool,
}

/// Write-only observation state. No process reads it to decide anything.
#[derive(Clone, Debug, Default)]
pub struct Probe {
    pub in_flight: VecDeque<ProbeEntry>,
    /// Entries WB has taken off `in_flight`.
    pub popped: usize,
    pub operands: Vec<OperandRecord>,
    pub retired: Vec<RetireRecord>,
    pub interrupts: Vec<InterruptRecord>,
    pub backpoints: Vec<Backpoint>,
    pub effects: Vec<Effect>,
    /// RegRead requests that announced a destination (FRAQ bit set).
    pub writer_reads: usize,
    pub halt_pc: Option<u32>,
}
