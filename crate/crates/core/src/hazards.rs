//! Data-hazard history structures and the multi-colour control-hazard rules.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HazardError {
    #[error("pipeline depth {n} must exceed the execution stage {i}")]
    InvalidShape { n: usize, i: usize },
    #[error("no pending write to ${0} recorded")]
    NoMatch(u8),
    #[error("colour vectors of length {0} and {1}")]
    LengthMismatch(usize, usize),
}

/// Pipeline depth `n` with execution at stage `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    n: usize,
    i: usize,
}

impl Shape {
    pub const SAMIPS: Shape = Shape { n: 5, i: 3 };

    pub fn new(n: usize, i: usize) -> Result<Shape, HazardError> {
        if n <= i || i == 0 {
            return Err(HazardError::InvalidShape { n, i });
        }
        Ok(Shape { n, i })
    }

    pub fn n(self) -> usize {
        self.n
    }

    pub fn i(self) -> usize {
        self.i
    }

    /// Entries of the DHDQ and modulus of the DHDT index: n−i+2.
    pub fn history(self) -> usize {
        self.n - self.i + 2
    }

    /// FRAQ length: n−i.
    pub fn in_flight(self) -> usize {
        self.n - self.i
    }

    /// Largest forwarding distance, n−i+1 (wait for the register write).
    pub fn max_distance(self) -> u8 {
        (self.n - self.i + 1) as u8
    }

    /// Bits per index: ceil(log2(n−i+2)).
    pub fn index_bits(self) -> u32 {
        ceil_log2(self.history())
    }

    /// Bits needed to encode one FwCase.
    pub fn fw_bits(self) -> u32 {
        ceil_log2(self.max_distance() as usize + 1)
    }
}

fn ceil_log2(v: usize) -> u32 {
    usize::BITS - (v.max(1) - 1).leading_zeros()
}

/// Where an operand comes from: the register file or a result `d` instructions older.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FwCase {
    Non,
    Fwd(u8),
}

impl FwCase {
    /// Result forwarded from the MEM stage.
    pub const EXER: FwCase = FwCase::Fwd(1);
    /// Result forwarded from the WB stage.
    pub const MEMR: FwCase = FwCase::Fwd(2);
    /// Wait for the register write in flight.
    pub const WBR: FwCase = FwCase::Fwd(3);

    pub fn wire(self) -> u8 {
        match self {
            FwCase::Non => 0,
            FwCase::Fwd(d) => d,
        }
    }

    pub fn from_wire(w: u8) -> FwCase {
        if w == 0 { FwCase::Non } else { FwCase::Fwd(w) }
    }

    pub fn is_forward(self) -> bool {
        self != FwCase::Non
    }
}

impl fmt::Display for FwCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FwCase::Non => f.write_str("Non"),
            FwCase::EXER => f.write_str("EXER"),
            FwCase::MEMR => f.write_str("MEMR"),
            FwCase::WBR => f.write_str("WBR"),
            FwCase::Fwd(d) => write!(f, "Fwd({d})"),
        }
    }
}

/// Forwarding decision for the two source operands of one register read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FwPair {
    pub fw0: FwCase,
    pub fw1: FwCase,
}

/// Common interface of the two hazard detectors.
pub trait HazardDetector {
    /// Classify the sources, then record `wd` as pending. Returns the
    /// forwarding cases and the index snapshot carried by the writer.
    fn read(&mut self, rs: u8, rt: u8, wd: u8) -> (FwPair, u8);
    /// A register write or reset for `rd` arrived, tagged with the snapshot from its read.
    fn write(&mut self, rd: u8, snapshot: u8) -> Result<(), HazardError>;
}

/// Queue of the destinations of the last n−i+2 reads; entry 0 is the youngest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dhdq {
    shape: Shape,
    entries: VecDeque<u8>,
}

impl Dhdq {
    pub fn new(shape: Shape) -> Self {
        Dhdq { shape, entries: std::iter::repeat(0).take(shape.history()).collect() }
    }

    pub fn from_entries(shape: Shape, entries: &[u8]) -> Self {
        assert_eq!(entries.len(), shape.history());
        Dhdq { shape, entries: entries.iter().copied().collect() }
    }

    pub fn entries(&self) -> Vec<u8> {
        self.entries.iter().copied().collect()
    }

    fn classify(&self, src: u8) -> FwCase {
        if src == 0 {
            return FwCase::Non;
        }
        match self.entries.iter().position(|&e| e == src) {
            Some(pos) if pos + 1 <= self.shape.max_distance() as usize => FwCase::Fwd(pos as u8 + 1),
            _ => FwCase::Non,
        }
    }

    pub fn dhdq_read(&mut self, rs: u8, rt: u8, wd: u8) -> FwPair {
        let pair = FwPair { fw0: self.classify(rs), fw1: self.classify(rt) };
        self.entries.pop_back();
        self.entries.push_front(wd);
        pair
    }

    /// Clear the oldest entry naming `rd`.
    pub fn dhdq_write(&mut self, rd: u8) -> Result<(), HazardError> {
        let pos = self.entries.iter().rposition(|&e| e == rd && e != 0).ok_or(HazardError::NoMatch(rd))?;
        self.entries[pos] = 0;
        Ok(())
    }
}

impl HazardDetector for Dhdq {
    fn read(&mut self, rs: u8, rt: u8, wd: u8) -> (FwPair, u8) {
        (self.dhdq_read(rs, rt, wd), 0)
    }

    fn write(&mut self, rd: u8, _snapshot: u8) -> Result<(), HazardError> {
        self.dhdq_write(rd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flag {
    pub clean: bool,
    pub index: u8,
}

/// Per-register clean bit and writer index, with a modular current index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dhdt {
    shape: Shape,
    flags: [Flag; 32],
    cur_index: u8,
}

impl Dhdt {
    pub fn new(shape: Shape) -> Self {
        Dhdt { shape, flags: [Flag { clean: true, index: 0 }; 32], cur_index: 0 }
    }

    pub fn flag(&self, r: u8) -> Flag {
        self.flags[r as usize]
    }

    pub fn cur_index(&self) -> u8 {
        self.cur_index
    }

    fn classify(&self, src: u8) -> FwCase {
        let flag = self.flags[src as usize];
        if src == 0 || flag.clean {
            return FwCase::Non;
        }
        let m = self.shape.history() as u8;
        let d = (self.cur_index + m - flag.index) % m;
        if d == 0 || d > self.shape.max_distance() { FwCase::Non } else { FwCase::Fwd(d) }
    }

    /// Returns the forwarding pair and the index snapshot for `wd`.
    pub fn dhdt_read(&mut self, rs: u8, rt: u8, wd: u8) -> (FwPair, u8) {
        let pair = FwPair { fw0: self.classify(rs), fw1: self.classify(rt) };
        let snapshot = self.cur_index;
        if wd != 0 {
            self.flags[wd as usize] = Flag { clean: false, index: snapshot };
        }
        self.cur_index = (self.cur_index + 1) % self.shape.history() as u8;
        (pair, snapshot)
    }

    /// Mark `rd` clean only if no younger writer has claimed it since.
    pub fn dhdt_write(&mut self, rd: u8, snapshot: u8) {
        let flag = &mut self.flags[rd as usize];
        if rd != 0 && flag.index == snapshot {
            flag.clean = true;
        }
    }
}

impl HazardDetector for Dhdt {
    fn read(&mut self, rs: u8, rt: u8, wd: u8) -> (FwPair, u8) {
        self.dhdt_read(rs, rt, wd)
    }

    fn write(&mut self, rd: u8, snapshot: u8) -> Result<(), HazardError> {
        self.dhdt_write(rd, snapshot);
        Ok(())
    }
}

/// Which detector the register bank embeds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HazardImpl {
    #[default]
    Dhdq,
    Dhdt,
}

impl HazardImpl {
    pub fn build(self, shape: Shape) -> Box<dyn HazardDetector + Send> {
        match self {
            HazardImpl::Dhdq => Box::new(Dhdq::new(shape)),
            HazardImpl::Dhdt => Box::new(Dhdt::new(shape)),
        }
    }
}

/// One bit per in-flight instruction: bit j set when the instruction j+1 ahead writes a register.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraq {
    bits: VecDeque<bool>,
}

impl Fraq {
    pub fn new(shape: Shape) -> Self {
        Fraq { bits: std::iter::repeat(false).take(shape.in_flight()).collect() }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        Fraq { bits: bits.iter().copied().collect() }
    }

    pub fn bits(&self) -> Vec<bool> {
        self.bits.iter().copied().collect()
    }

    /// Emit the current bits, then shift `will_write` in at the young end.
    pub fn fraq_step(&mut self, will_write: bool) -> Vec<bool> {
        let out = self.bits();
        self.bits.pop_back();
        self.bits.push_front(will_write);
        out
    }

    pub fn pack(bits: &[bool]) -> u128 {
        bits.iter().enumerate().fold(0, |acc, (j, &b)| acc | ((b as u128) << j))
    }

    pub fn unpack(word: u128, len: usize) -> Vec<bool> {
        (0..len).map(|j| word >> j & 1 == 1).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StorageKind {
    Dhdt,
    Dhdq,
}

/// Extra register-bank bits needed by each detector.
pub fn storage_cost(kind: StorageKind, n: usize, i: usize) -> Result<u32, HazardError> {
    let shape = Shape::new(n, i)?;
    let idx = shape.index_bits();
    Ok(match kind {
        StorageKind::Dhdt => (idx + 1) * 31 + idx,
        StorageKind::Dhdq => shape.history() as u32 * 5,
    })
}

/// Prioritised colour bits; bit `s` belongs to stage `s`, and higher stages win.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColourVector {
    bits: u16,
    k: u8,
}

impl ColourVector {
    pub fn zero(k: usize) -> Self {
        assert!((1..=16).contains(&k));
        ColourVector { bits: 0, k: k as u8 }
    }

    pub fn from_bits(bits: u16, k: usize) -> Self {
        let mut c = ColourVector::zero(k);
        c.bits = bits & c.mask();
        c
    }

    pub fn len(self) -> usize {
        self.k as usize
    }

    pub fn is_empty(self) -> bool {
        self.k == 0
    }

    pub fn bits(self) -> u16 {
        self.bits
    }

    fn mask(self) -> u16 {
        ((1u32 << self.k) - 1) as u16
    }

    pub fn bit(self, s: usize) -> bool {
        self.bits >> s & 1 == 1
    }

    pub fn flipped(self, s: usize) -> Self {
        assert!(s < self.len());
        ColourVector { bits: self.bits ^ (1 << s), k: self.k }
    }

    /// True when every bit strictly above `s` agrees.
    pub fn higher_equal(self, other: ColourVector, s: usize) -> bool {
        let above = self.mask() & !((2u32 << s) - 1) as u16;
        (self.bits ^ other.bits) & above == 0
    }
}

impl fmt::Debug for ColourVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for s in 0..self.len() {
            if s > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", self.bit(s) as u8)?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Execute,
    /// A deeper hazard has redirected the stream; take on its colour.
    ExecuteAdopt,
    Discard,
}

/// Stage `s` judges an arriving instruction. Bits below `s` are ignored;
/// the stage always keeps the colour of the last instruction it accepted.
pub fn colour_check_stage(
    s: usize,
    stage: ColourVector,
    instr: ColourVector,
) -> Result<(Verdict, ColourVector), HazardError> {
    if stage.len() != instr.len() {
        return Err(HazardError::LengthMismatch(stage.len(), instr.len()));
    }
    Ok(if !stage.higher_equal(instr, s) {
        (Verdict::ExecuteAdopt, instr)
    } else if stage.bit(s) != instr.bit(s) {
        (Verdict::Discard, stage)
    } else {
        (Verdict::Execute, instr)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HazardKind {
    Branch,
    Exception,
    Interrupt,
}

/// Redirect request raised by a stage. For exceptions `target` is the return address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HazardRequest {
    pub target: u32,
    pub colour: ColourVector,
    pub stage: usize,
    pub kind: HazardKind,
}

impl HazardRequest {
    /// {colour k, stage 2, kind 1, target 32}, most significant first.
    pub fn width(k: usize) -> u32 {
        k as u32 + 2 + 1 + 32
    }

    pub fn pack(&self) -> u128 {
        let kind = matches!(self.kind, HazardKind::Exception | HazardKind::Interrupt) as u128;
        ((self.colour.bits() as u128) << 35) | ((self.stage as u128 & 3) << 33) | (kind << 32) | self.target as u128
    }

    pub fn unpack(word: u128, k: usize) -> HazardRequest {
        HazardRequest {
            target: word as u32,
            kind: if word >> 32 & 1 == 1 { HazardKind::Exception } else { HazardKind::Branch },
            stage: (word >> 33 & 3) as usize,
            colour: ColourVector::from_bits((word >> 35) as u16, k),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AauRequest {
    Pc { addr: u32, colour: ColourVector },
    Hazard(HazardRequest),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AauAction {
    IssueAddress(u32),
    IssueExceptionVector { epc: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AauDecision {
    pub accept: bool,
    pub colour: ColourVector,
    pub action: Option<AauAction>,
}

pub fn aau_check(aau: ColourVector, req: &AauRequest) -> AauDecision {
    let reject = AauDecision { accept: false, colour: aau, action: None };
    match *req {
        AauRequest::Pc { addr, colour } if colour == aau => {
            AauDecision { accept: true, colour: aau, action: Some(AauAction::IssueAddress(addr)) }
        }
        AauRequest::Pc { .. } => reject,
        AauRequest::Hazard(h) if aau.higher_equal(h.colour, h.stage) => {
            let action = match h.kind {
                HazardKind::Branch => AauAction::IssueAddress(h.target),
                HazardKind::Exception | HazardKind::Interrupt => AauAction::IssueExceptionVector { epc: h.target },
            };
            AauDecision { accept: true, colour: h.colour, action: Some(action) }
        }
        AauRequest::Hazard(_) => reject,
    }
}

/// Re-entry address for an interrupt accepted by the AAU.
pub fn interrupt_backpoint(last_issued: u32, pending: Option<&HazardRequest>) -> u32 {
    match pending {
        Some(HazardRequest { kind: HazardKind::Exception, target, .. }) => *target,
        Some(HazardRequest { kind: HazardKind::Branch, target, .. }) => *target,
        _ => last_issued.wrapping_add(4),
    }
}

/// One step of an in-order register-bank request stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceEvent {
    Read { rs: u8, rt: u8, wd: u8 },
    /// Write-back of the `seq`-th read's destination.
    Write { seq: usize },
}

/// A random read/write stream obeying the pipeline's ordering: writes retire in
/// program order, and the write of read `k` lands before read `k + n − i + 2`.
pub fn random_rw_trace<R: rand::Rng>(rng: &mut R, reads: usize, regs: u8, shape: Shape) -> Vec<TraceEvent> {
    let horizon = shape.history() - 1;
    let mut out = Vec::with_capacity(reads * 2);
    let mut issued: Vec<u8> = Vec::with_capacity(reads);
    let mut next_write = 0;
    let drain = |upto: usize, issued: &[u8], out: &mut Vec<TraceEvent>, next_write: &mut usize| {
        while *next_write < upto {
            if issued[*next_write] != 0 {
                out.push(TraceEvent::Write { seq: *next_write });
            }
            *next_write += 1;
        }
    };
    for k in 0..reads {
        if k >= horizon {
            drain(k - horizon + 1, &issued, &mut out, &mut next_write);
        }
        let mut reg = || if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..=regs) };
        let (rs, rt, wd) = (reg(), reg(), reg());
        out.push(TraceEvent::Read { rs, rt, wd });
        issued.push(wd);
        let extra = rng.gen_range(0..=issued.len() - next_write);
        drain(next_write + extra, &issued, &mut out, &mut next_write);
    }
    drain(issued.len(), &issued, &mut out, &mut next_write);
    out
}

/// Feed a trace through a detector, collecting the forwarding decisions.
pub fn replay(detector: &mut dyn HazardDetector, trace: &[TraceEvent]) -> Result<Vec<FwPair>, HazardError> {
    let mut snapshots = Vec::new();
    let mut dests = Vec::new();
    let mut out = Vec::new();
    for ev in trace {
        match *ev {
            TraceEvent::Read { rs, rt, wd } => {
                let (pair, snap) = detector.read(rs, rt, wd);
                out.push(pair);
                snapshots.push(snap);
                dests.push(wd);
            }
            TraceEvent::Write { seq } => detector.write(dests[seq], snapshots[seq])?,
        }
    }
    Ok(out)
}
