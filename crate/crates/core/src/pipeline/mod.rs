//! The asynchronous processor: one process per functional block, wired by
//! handshake channels, plus helpers that run a program and extract the
//! architectural state afterwards.

mod backend;
mod decode;
mod execute;
mod frontend;
mod probe;
pub mod wires;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchState, DelaySlot, InterruptRecord, Memory, RetireRecord};
use crate::hazards::HazardImpl;
use crate::isa::{decode as decode_word, Decoded, ExeMode, MemoryImage};
use crate::kernel::{
    create_simulator, ArbiterPolicy, ChannelSpec, EventLog, ProcessSpec, RunLimits, RunOutcome, SimError,
    SimTime, Simulator, Wire,
};

pub use probe::{Backpoint, Effect, OperandRecord, Probe, ProbeEntry};
use wires::*;

/// Where asynchronous interrupts are accepted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InterruptScheme {
    /// The write-back unit discards the next instruction and asks the AAU for the vector.
    #[default]
    Wb,
    /// The AAU drains the pipeline behind a marker and restarts from a back-point.
    Aau,
}

/// Per-process latency table: process name, action name, latency.
pub type DelayTable = BTreeMap<String, BTreeMap<String, SimTime>>;

/// Default block latencies for an EX encoding mode.
pub fn default_delays(mode: ExeMode) -> DelayTable {
    let ns = |tenths: u64| SimTime::ticks(tenths);
    let optimized = mode == ExeMode::Optimized;
    let table: &[(&str, &[(&str, u64)])] = &[
        ("PC", &[("issue", 5)]),
        ("ADD4", &[("add", 10)]),
        ("IMem", &[("read", 20)]),
        ("Arb1", &[("grant", 2)]),
        ("Arb2", &[("grant", 2)]),
        ("AAU", &[("check", 10)]),
        ("DeCode", &[("decode", 20), ("colour", if optimized { 0 } else { 5 })]),
        ("RegBank", &[("read", 20), ("write", 10), ("detect", 10)]),
        ("FWunit", &[("route", 5)]),
        ("Mux0", &[("select", 3)]),
        ("Mux1", &[("select", 3)]),
        (
            "EXEunit",
            &[
                ("colour", if optimized { 0 } else { 10 }),
                ("alu", 30),
                ("shift", 20),
                ("branch", 20),
                ("mul", 80),
                ("div", 200),
                ("nop", if optimized { 5 } else { 30 }),
                ("lui", if optimized { 5 } else { 20 }),
            ],
        ),
        ("MemInt", &[("colour", 5), ("access", 10)]),
        ("DMem", &[("read", 20), ("write", 20)]),
        ("WBUnit", &[("commit", 10)]),
        ("CP0", &[("update", 10)]),
        ("Cp0Port", &[("grant", 2)]),
        ("IntBuf", &[("pass", 2)]),
    ];
    table
        .iter()
        .map(|(p, acts)| (p.to_string(), acts.iter().map(|(a, t)| (a.to_string(), ns(*t))).collect()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessorConfig {
    pub hazard_impl: HazardImpl,
    pub delay_slot: DelaySlot,
    pub exe_mode: ExeMode,
    pub interrupt_scheme: InterruptScheme,
    pub delays: DelayTable,
    /// Seeds arbitration ties.
    pub seed: u64,
    /// Interrupt pin assertions as (time, pin).
    pub interrupts: Vec<(SimTime, u8)>,
    pub max_events: u64,
    /// Test hook: the register bank reports EXER as MEMR.
    pub corrupt_fwcase: bool,
}

impl Default for ProcessorConfig {
    fn default() -> Self {
        ProcessorConfig {
            hazard_impl: HazardImpl::Dhdq,
            delay_slot: DelaySlot::On,
            exe_mode: ExeMode::Original,
            interrupt_scheme: InterruptScheme::Wb,
            delays: default_delays(ExeMode::Original),
            seed: 0,
            interrupts: Vec::new(),
            max_events: 20_000_000,
            corrupt_fwcase: false,
        }
    }
}

impl ProcessorConfig {
    /// Switches the EX mode and its default latencies together.
    pub fn with_exe_mode(mut self, mode: ExeMode) -> Self {
        self.exe_mode = mode;
        self.delays = default_delays(mode);
        self
    }

    fn delays_for(&self, process: &str) -> BTreeMap<String, SimTime> {
        self.delays.get(process).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("deadlock at {at} with blocked channels {blocked:?}")]
    Deadlock { at: SimTime, blocked: Vec<String> },
    #[error("event limit reached at {0}")]
    EventLimit(SimTime),
}

/// Architectural state owned by the processes and read back after a run.
#[derive(Debug)]
pub struct Shared {
    pub regs: [u32; 32],
    pub hi: u32,
    pub lo: u32,
    pub cp0: [u32; 32],
    pub memory: Memory,
    pub probe: Probe,
}

pub type SharedRef = Arc<Mutex<Shared>>;

/// Ports of one block, for metrics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPorts {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// A wired processor ready to run.
pub struct Processor {
    pub sim: Simulator,
    pub blocks: Vec<BlockPorts>,
    pub shared: SharedRef,
}

/// Everything needed by the processes, cloned into each.
#[derive(Clone)]
pub(crate) struct Env {
    pub cfg: Arc<ProcessorConfig>,
    pub shared: SharedRef,
    pub image: Arc<MemoryImage>,
}

/// Addresses in the image that hold control transfers.
fn transfer_sites(image: &MemoryImage) -> BTreeSet<u32> {
    image
        .words()
        .filter(|&(_, w)| matches!(decode_word(w), Decoded::Insn(i) if i.mnemonic.is_control_transfer()))
        .map(|(a, _)| a)
        .collect()
}

fn channel_table(scheme: InterruptScheme) -> Vec<ChannelSpec> {
    let mut chans = vec![
        ChannelSpec::push("PCvalue", Coloured::WIDTH),
        ChannelSpec::push("CInsAdd", Coloured::WIDTH),
        ChannelSpec::push("PCplus4", Coloured::WIDTH),
        ChannelSpec::pull("NPC", Coloured::WIDTH),
        ChannelSpec::push("BaseAddID", 32),
        ChannelSpec::push("CIns", Fetched::WIDTH),
        ChannelSpec::push("IDch", Request::WIDTH),
        ChannelSpec::push("EXch", Request::WIDTH),
        ChannelSpec::push("MEMch", Request::WIDTH),
        ChannelSpec::push("WBch", Request::WIDTH),
        ChannelSpec::push("NTarget1", Request::WIDTH),
        ChannelSpec::push("NTarget2", Request::WIDTH),
        ChannelSpec::push("EXCtrl", ExCtrl::WIDTH),
        ChannelSpec::push("BaseAddEX", SlotAddr::WIDTH),
        ChannelSpec::push("RegRead", RegReadMsg::WIDTH),
        ChannelSpec::push("RegWrite", RegWriteMsg::WIDTH),
        ChannelSpec::push("Offset32", 32),
        ChannelSpec::push("Sa", Reg5::WIDTH),
        ChannelSpec::push("CIDRd", Reg5::WIDTH),
        ChannelSpec::push("PIDRd", PidRd::WIDTH),
        ChannelSpec::push("FRACtrl", FraCtrl::WIDTH),
        ChannelSpec::push("FWCtrl", FwCtrl::WIDTH),
        ChannelSpec::push("ReadData0", 32),
        ChannelSpec::push("ReadData1", 32),
        ChannelSpec::push("FOp0", 32),
        ChannelSpec::push("FOp1", 32),
        ChannelSpec::push("Op0", 32),
        ChannelSpec::push("Op1", 32),
        ChannelSpec::push("FEXRes", 32),
        ChannelSpec::push("FMEMRes", 32),
        ChannelSpec::push("MEMCtrl", StageCtl::WIDTH),
        ChannelSpec::push("EXRes", 32),
        ChannelSpec::push("MemD", 32),
        ChannelSpec::push("EXRd", RdTag::WIDTH),
        ChannelSpec::push("BaseAddMEM", 32),
        ChannelSpec::push("MemAdd", MemAddMsg::WIDTH),
        ChannelSpec::push("WriteData", 32),
        ChannelSpec::push("MemData", 32),
        ChannelSpec::push("WBCtrl", StageCtl::WIDTH),
        ChannelSpec::push("MEMRes", 32),
        ChannelSpec::push("MEMRd", RdTag::WIDTH),
        ChannelSpec::push("WBHi", 32),
        ChannelSpec::push("BaseAddWB", 32),
        ChannelSpec::push("CP0W1", Cp0Commit::WIDTH),
        ChannelSpec::push("CP0W2", Cp0Note::WIDTH),
        ChannelSpec::push("CP0RAdd", Reg5::WIDTH),
        ChannelSpec::push("StatusReq", Reg5::WIDTH),
        ChannelSpec::push("CP0Rd", Cp0Read::WIDTH),
        ChannelSpec::push("CP0RData", 32),
        ChannelSpec::push("StatusData", 32),
        ChannelSpec::push("IntRaise", Pin::WIDTH),
        ChannelSpec::push("IntReq", Pin::WIDTH),
    ];
    if scheme == InterruptScheme::Wb {
        chans.push(ChannelSpec::push("StoreGo", 1));
    }
    chans.push(ChannelSpec::push("IntPin", Pin::WIDTH));
    chans
}

/// Wires the processor for `image`.
pub fn build_processor(cfg: &ProcessorConfig, image: &MemoryImage) -> Result<Processor, PipelineError> {
    let shared = Arc::new(Mutex::new(Shared {
        regs: [0; 32],
        hi: 0,
        lo: 0,
        cp0: [0; 32],
        memory: Memory::new(image.clone()),
        probe: Probe::default(),
    }));
    let env = Env { cfg: Arc::new(cfg.clone()), shared: shared.clone(), image: Arc::new(image.clone()) };
    let sites = Arc::new(transfer_sites(image));
    let mut procs: Vec<ProcessSpec> = Vec::new();
    procs.extend(frontend::processes(&env, sites));
    procs.extend(decode::processes(&env));
    procs.extend(execute::processes(&env));
    procs.extend(backend::processes(&env));
    let procs: Vec<ProcessSpec> = procs.into_iter().map(|p| {
        let d = cfg.delays_for(&p.name);
        p.delays(&d)
    }).collect();
    let blocks = procs
        .iter()
        .map(|p| BlockPorts { name: p.name.clone(), inputs: p.inputs.clone(), outputs: p.outputs.clone() })
        .collect();
    let sim = create_simulator(procs, channel_table(cfg.interrupt_scheme), ArbiterPolicy::seeded(cfg.seed))?;
    Ok(Processor { sim, blocks, shared })
}

/// Result of running a program to its halt.
#[derive(Debug)]
pub struct PipelineRun {
    pub state: ArchState,
    pub memory: Memory,
    pub trace: Vec<RetireRecord>,
    pub interrupts: Vec<InterruptRecord>,
    pub effects: Vec<Effect>,
    pub probe: Probe,
    pub log: EventLog,
    /// Completed transfers per channel as counted by the kernel.
    pub transfers: Vec<(String, u64)>,
    pub blocks: Vec<BlockPorts>,
    pub end_time: SimTime,
    pub halted: bool,
}

impl Processor {
    /// Runs to the halt instruction and extracts the architectural state.
    pub fn run(mut self, max_events: u64) -> Result<PipelineRun, PipelineError> {
        let outcome = self.sim.run(RunLimits { max_time: SimTime(u64::MAX), max_events })?;
        let end_time = self.sim.now();
        let halted = match outcome {
            RunOutcome::Halted => true,
            RunOutcome::Quiescent { blocked } => return Err(PipelineError::Deadlock { at: end_time, blocked }),
            RunOutcome::MaxEvents | RunOutcome::MaxTime => return Err(PipelineError::EventLimit(end_time)),
        };
        let log = self.sim.take_log();
        let transfers = self.sim.transfer_counts();
        let mut sh = self.shared.lock().unwrap();
        let probe = std::mem::take(&mut sh.probe);
        let state = ArchState { regs: sh.regs, hi: sh.hi, lo: sh.lo, pc: probe.halt_pc.unwrap_or(0), cp0: sh.cp0 };
        Ok(PipelineRun {
            state,
            memory: sh.memory.clone(),
            trace: probe.retired.clone(),
            interrupts: probe.interrupts.clone(),
            effects: probe.effects.clone(),
            probe,
            log,
            transfers,
            blocks: self.blocks.clone(),
            end_time,
            halted,
        })
    }
}

/// Builds the processor for `image` and runs it to the halt.
pub fn run_program(cfg: &ProcessorConfig, image: &MemoryImage) -> Result<PipelineRun, PipelineError> {
    build_processor(cfg, image)?.run(cfg.max_events)
}
