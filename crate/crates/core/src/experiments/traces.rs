//! Register-read traces that drive the forwarding frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::RetireRecord;
use crate::hazards::TraceEvent;
use crate::isa::{decode, MemoryImage};

/// One register-bank request: two sources and the destination, 0 for none.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegRead {
    pub rs: u8,
    pub rt: u8,
    pub wd: u8,
}

impl RegRead {
    pub const fn new(rs: u8, rt: u8, wd: u8) -> Self {
        RegRead { rs, rt, wd }
    }
}

/// Register reads of a retired instruction stream, in program order.
/// Instructions that trapped never wrote their destination and keep `wd = 0`.
pub fn regread_trace(image: &MemoryImage, retired: &[RetireRecord]) -> Vec<RegRead> {
    retired
        .iter()
        .filter_map(|r| {
            let insn = decode(image.word(r.addr)).instruction()?;
            let (rs, rt) = insn.sources();
            let wd = if r.exception.is_some() || insn.mnemonic.is_store() { 0 } else { insn.dest() };
            Some(RegRead { rs, rt, wd })
        })
        .collect()
}

/// Synthetic trace with controllable dependency density. With probability
/// `density` each source names the destination of one of the previous
/// `reach` reads; otherwise it is a uniform register in `1..=regs`.
pub fn dense_trace<R: Rng>(rng: &mut R, len: usize, regs: u8, density: f64, reach: usize) -> Vec<RegRead> {
    let mut out: Vec<RegRead> = Vec::with_capacity(len);
    for _ in 0..len {
        let mut source = |out: &[RegRead]| {
            let back = rng.gen_range(1..=reach.max(1));
            if out.len() >= back && rng.gen_bool(density) {
                let wd = out[out.len() - back].wd;
                if wd != 0 {
                    return wd;
                }
            }
            rng.gen_range(1..=regs)
        };
        let rs = source(&out);
        let rt = source(&out);
        let wd = rng.gen_range(1..=regs);
        out.push(RegRead { rs, rt, wd });
    }
    out
}

/// The same reads with each write placed as late as a pipeline of `history`
/// entries allows: the write of read `k` lands just before read `k + history`.
pub fn latest_writes(trace: &[RegRead], history: usize) -> Vec<TraceEvent> {
    let mut out = Vec::with_capacity(trace.len() * 2);
    let flush = |upto: usize, out: &mut Vec<TraceEvent>, next: &mut usize| {
        while *next < upto {
            if trace[*next].wd != 0 {
                out.push(TraceEvent::Write { seq: *next });
            }
            *next += 1;
        }
    };
    let mut next = 0;
    for (k, r) in trace.iter().enumerate() {
        flush((k + 1).saturating_sub(history), &mut out, &mut next);
        out.push(TraceEvent::Read { rs: r.rs, rt: r.rt, wd: r.wd });
    }
    flush(trace.len(), &mut out, &mut next);
    out
}
