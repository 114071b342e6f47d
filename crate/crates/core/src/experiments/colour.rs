//! Colour frame: a PC, an address arbitration unit and five generic stages
//! running a pseudo-program whose instructions raise control hazards.
//!
//! Every stage that can raise a hazard owns one colour bit, deeper stages
//! owning higher bits. An owning stage judges arrivals with
//! [`colour_check_stage`] on its bit; other stages pass everything through.

use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::hazards::{
    aau_check, colour_check_stage, AauAction, AauRequest, ColourVector, HazardKind, HazardRequest, Verdict,
};
use crate::kernel::{
    create_simulator, ArbiterPolicy, ChannelSpec, Ctx, Input, ProcessSpec, RunLimits, RunOutcome, SimError, SimTime,
};

pub const STAGES: usize = 5;

/// Five hazard bits; bit `s − 1` raises a control hazard at stage `s`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HazardInstr(pub u8);

impl HazardInstr {
    pub const NOP: HazardInstr = HazardInstr(0);

    pub fn raises_at(self, stage: usize) -> bool {
        (1..=STAGES).contains(&stage) && self.0 >> (stage - 1) & 1 == 1
    }

    pub fn is_nop(self) -> bool {
        self.0 & 0x1F == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColourFrame {
    pub k: usize,
    pub program: Vec<HazardInstr>,
    /// Executed instructions after which the frame stops.
    pub max_executed: usize,
    pub stage_latency: SimTime,
    /// Cost per colour bit of handling the vector, paid by every stage.
    pub check_per_bit: SimTime,
    pub aau_latency: SimTime,
}

impl ColourFrame {
    pub fn new(k: usize, program: Vec<HazardInstr>) -> Self {
        ColourFrame {
            k,
            program,
            max_executed: 256,
            stage_latency: SimTime::ns(20),
            check_per_bit: SimTime::ticks(5),
            aau_latency: SimTime::ns(1),
        }
    }

    /// Stages that raise a hazard somewhere in the program, shallowest first.
    pub fn hazard_stages(&self) -> Vec<usize> {
        (1..=STAGES).filter(|&s| self.program.iter().any(|i| i.raises_at(s))).collect()
    }
}

/// Redirect target of the hazard raised by `addr` at `stage`, in `0..len`.
pub fn hazard_targets(len: usize, seed: u64) -> Vec<[u32; STAGES]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC010_0B17);
    (0..len).map(|_| std::array::from_fn(|_| rng.gen_range(0..len.max(1)) as u32)).collect()
}

/// Addresses that reach the last stage when the program runs one
/// instruction at a time. The deepest raised hazard decides the successor.
pub fn control_flow_oracle(program: &[HazardInstr], targets: &[[u32; STAGES]], max_executed: usize) -> Vec<u32> {
    let mut out = Vec::new();
    let mut pc = 0usize;
    while pc < program.len() && out.len() < max_executed {
        out.push(pc as u32);
        let insn = program[pc];
        pc = match (1..=STAGES).rev().find(|&s| insn.raises_at(s)) {
            Some(s) => targets[pc][s - 1] as usize,
            None => pc + 1,
        };
    }
    out
}

/// Random program with hazards only at `stages`; each instruction raises at
/// each allowed stage with probability `density`.
pub fn random_hazard_program<R: Rng>(rng: &mut R, len: usize, stages: &[usize], density: f64) -> Vec<HazardInstr> {
    (0..len)
        .map(|_| {
            let bits = stages.iter().filter(|_| rng.gen_bool(density)).fold(0u8, |b, &s| b | 1 << (s - 1));
            HazardInstr(bits)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColourReport {
    pub k: usize,
    pub hazard_stages: Vec<usize>,
    /// Instructions accepted by each stage, stage 1 first.
    pub executed: [u64; STAGES],
    /// Instructions each stage discarded on a colour mismatch.
    pub discarded: [u64; STAGES],
    pub hazards_raised: u64,
    pub hazards_accepted: u64,
    /// Addresses completed by the last stage, in order.
    pub trace: Vec<u32>,
    pub oracle: Vec<u32>,
    pub end_time: SimTime,
}

impl ColourReport {
    pub fn matches_oracle(&self) -> bool {
        self.trace == self.oracle
    }
}

#[derive(Default)]
struct ColourTally {
    executed: [u64; STAGES],
    discarded: [u64; STAGES],
    raised: u64,
    accepted: u64,
    trace: Vec<u32>,
}

/// Address word 32, colour 16.
fn pack(addr: u32, colour: ColourVector) -> u128 {
    (colour.bits() as u128) << 32 | addr as u128
}

fn unpack(w: u128, k: usize) -> (u32, ColourVector) {
    (w as u32, ColourVector::from_bits((w >> 32) as u16, k))
}

fn link(s: usize) -> String {
    format!("L{s}")
}

fn hreq(s: usize) -> String {
    format!("HReq{s}")
}

async fn pc_unit(ctx: Ctx, k: usize) -> Result<(), SimError> {
    let fetch = ctx.output(&link(0))?;
    let req = ctx.output("PcReq")?;
    let npc = ctx.input("NPC")?;
    let (mut addr, mut colour) = (0u32, ColourVector::zero(k));
    loop {
        fetch.send(pack(addr, colour)).await?;
        req.send(pack(addr.wrapping_add(1), colour)).await?;
        (addr, colour) = unpack(npc.recv().await?, k);
    }
}

async fn aau(ctx: Ctx, k: usize, inputs: Vec<String>, tally: Arc<Mutex<ColourTally>>) -> Result<(), SimError> {
    let ports = inputs.iter().map(|n| ctx.input(n)).collect::<Result<Vec<Input>, _>>()?;
    let refs: Vec<&Input> = ports.iter().collect();
    let npc = ctx.output("NPC")?;
    let mut colour = ColourVector::zero(k);
    let mut pending: Option<u32> = None;
    loop {
        let (which, word) = if refs.len() == 1 { (0, refs[0].recv().await?) } else { ctx.arbitrate(&refs).await? };
        ctx.wait("check").await;
        if which == 0 {
            let (addr, c) = unpack(word, k);
            let next = match pending.take() {
                Some(target) => target,
                None => match aau_check(colour, &AauRequest::Pc { addr, colour: c }).action {
                    Some(AauAction::IssueAddress(a)) => a,
                    _ => return Err(ctx.fault("stale PC token with no redirect pending")),
                },
            };
            npc.send(pack(next, colour)).await?;
        } else {
            let h = unpack_request(word, k);
            let d = aau_check(colour, &AauRequest::Hazard(h));
            if d.accept {
                colour = d.colour;
                pending = Some(h.target);
                tally.lock().expect("tally").accepted += 1;
            }
        }
    }
}

fn pack_request(h: &HazardRequest) -> u128 {
    (h.stage as u128) << 48 | pack(h.target, h.colour)
}

fn unpack_request(w: u128, k: usize) -> HazardRequest {
    let (target, colour) = unpack(w, k);
    HazardRequest { target, colour, stage: (w >> 48) as usize & 0xF, kind: HazardKind::Branch }
}

/// Merges hazard requests so the AAU arbitrates at most four inputs.
fn merger(name: &str, inputs: Vec<String>, out: String) -> ProcessSpec {
    let (ins, o) = (inputs.clone(), out.clone());
    ProcessSpec::new(name, move |ctx| async move {
        let ports = ins.iter().map(|n| ctx.input(n)).collect::<Result<Vec<Input>, _>>()?;
        let refs: Vec<&Input> = ports.iter().collect();
        let out = ctx.output(&o)?;
        loop {
            let (_, v) = ctx.arbitrate(&refs).await?;
            out.send(v).await?;
        }
    })
    .inputs(inputs)
    .outputs([out])
}

struct StageEnv {
    s: usize,
    k: usize,
    /// Colour bit judged by this stage, if it raises hazards.
    bit: Option<usize>,
    program: Arc<Vec<HazardInstr>>,
    targets: Arc<Vec<[u32; STAGES]>>,
    max_executed: usize,
    tally: Arc<Mutex<ColourTally>>,
}

async fn stage(ctx: Ctx, env: StageEnv) -> Result<(), SimError> {
    let input = ctx.input(&link(env.s - 1))?;
    let next = (env.s < STAGES).then(|| ctx.output(&link(env.s))).transpose()?;
    let raise = env.bit.map(|_| ctx.output(&hreq(env.s))).transpose()?;
    let mut colour = ColourVector::zero(env.k);
    loop {
        let (addr, c) = unpack(input.recv().await?, env.k);
        ctx.wait("work").await;
        ctx.wait("check").await;
        let mut carried = c;
        if let Some(bit) = env.bit {
            let (verdict, kept) = colour_check_stage(bit, colour, c).map_err(|e| ctx.fault(e.to_string()))?;
            colour = kept;
            if verdict == Verdict::Discard {
                env.tally.lock().expect("tally").discarded[env.s - 1] += 1;
                continue;
            }
            let insn = env.program.get(addr as usize).copied().unwrap_or_default();
            if insn.raises_at(env.s) {
                colour = colour.flipped(bit);
                carried = colour;
                let target = env.targets[addr as usize][env.s - 1];
                let req = HazardRequest { target, colour, stage: bit, kind: HazardKind::Branch };
                env.tally.lock().expect("tally").raised += 1;
                raise.as_ref().expect("owning stage").send(pack_request(&req)).await?;
            }
        }
        let done = {
            let mut t = env.tally.lock().expect("tally");
            t.executed[env.s - 1] += 1;
            if next.is_none() && (addr as usize) < env.program.len() {
                t.trace.push(addr);
            }
            next.is_none() && ((addr as usize) >= env.program.len() || t.trace.len() >= env.max_executed)
        };
        match &next {
            Some(out) => out.send(pack(addr, carried)).await?,
            None if done => ctx.halt(),
            None => {}
        }
    }
}

/// Runs `frame.program` with hazard targets drawn from `seed`.
pub fn run_colour_frame(frame: &ColourFrame, seed: u64) -> Result<ColourReport, ExperimentError> {
    if frame.program.is_empty() {
        return Err(ExperimentError::EmptyProgram);
    }
    if !(1..=16).contains(&frame.k) {
        return Err(ExperimentError::ColourWidth(frame.k));
    }
    let hazard_stages = frame.hazard_stages();
    if hazard_stages.len() > frame.k {
        return Err(ExperimentError::InsufficientColours { k: frame.k, stages: hazard_stages.len() });
    }
    let k = frame.k;
    let targets = Arc::new(hazard_targets(frame.program.len(), seed));
    let program = Arc::new(frame.program.clone());
    let tally = Arc::new(Mutex::new(ColourTally::default()));

    let mut channels = vec![ChannelSpec::push("PcReq", 48), ChannelSpec::pull("NPC", 48)];
    channels.extend((0..STAGES).map(|s| ChannelSpec::push(link(s), 48)));
    channels.extend(hazard_stages.iter().map(|&s| ChannelSpec::push(hreq(s), 52)));

    let mut procs = vec![ProcessSpec::new("PC", move |ctx| pc_unit(ctx, k))
        .inputs(["NPC"])
        .outputs([link(0), "PcReq".to_string()])];
    let mut aau_inputs = vec!["PcReq".to_string()];
    let mut requests: Vec<String> = hazard_stages.iter().map(|&s| hreq(s)).collect();
    if requests.len() > 3 {
        let merged: Vec<String> = requests.drain(..requests.len() - 2).collect();
        channels.push(ChannelSpec::push("HReqM", 52));
        procs.push(merger("HMerge", merged, "HReqM".to_string()));
        requests.insert(0, "HReqM".to_string());
    }
    aau_inputs.extend(requests);
    let t = tally.clone();
    let ins = aau_inputs.clone();
    procs.push(
        ProcessSpec::new("AAU", move |ctx| aau(ctx, k, ins, t))
            .inputs(aau_inputs)
            .outputs(["NPC"])
            .delay("check", frame.aau_latency),
    );
    for s in 1..=STAGES {
        let bit = hazard_stages.iter().position(|&h| h == s);
        let env = StageEnv {
            s,
            k,
            bit,
            program: program.clone(),
            targets: targets.clone(),
            max_executed: frame.max_executed,
            tally: tally.clone(),
        };
        let mut outputs = Vec::new();
        if s < STAGES {
            outputs.push(link(s));
        }
        if bit.is_some() {
            outputs.push(hreq(s));
        }
        procs.push(
            ProcessSpec::new(format!("Stage{s}"), move |ctx| stage(ctx, env))
                .inputs([link(s - 1)])
                .outputs(outputs)
                .delay("work", frame.stage_latency)
                .delay("check", frame.check_per_bit.scale(k as u64)),
        );
    }

    let mut sim = create_simulator(procs, channels, ArbiterPolicy::seeded(seed))?;
    let max_events = 2_000 * (frame.max_executed as u64 + frame.program.len() as u64) + 10_000;
    match sim.run(RunLimits { max_time: SimTime(u64::MAX), max_events })? {
        RunOutcome::Halted => {}
        RunOutcome::Quiescent { blocked } => return Err(ExperimentError::Deadlock(blocked)),
        RunOutcome::MaxEvents | RunOutcome::MaxTime => return Err(ExperimentError::EventLimit),
    }
    let end_time = sim.now();
    let t = tally.lock().expect("tally");
    Ok(ColourReport {
        k,
        hazard_stages,
        executed: t.executed,
        discarded: t.discarded,
        hazards_raised: t.raised,
        hazards_accepted: t.accepted,
        trace: t.trace.clone(),
        oracle: control_flow_oracle(&frame.program, &targets, frame.max_executed),
        end_time,
    })
}

/// One row of the colour-width sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColourSweepRow {
    pub report: ColourReport,
    /// Run time of an all-NOP program of the same length at this width.
    pub nop_time: SimTime,
    /// Change of `nop_time` from the previous width.
    pub overhead_delta: SimTime,
}

/// How the sweep builds the program for each width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SweepProgram {
    AllNop { len: usize },
    /// Hazards at the `k` deepest stages.
    Random { len: usize, density: f64 },
}

pub fn colour_sweep(
    widths: impl IntoIterator<Item = usize>,
    program: SweepProgram,
    seed: u64,
) -> Result<Vec<ColourSweepRow>, ExperimentError> {
    let len = match program {
        SweepProgram::AllNop { len } | SweepProgram::Random { len, .. } => len,
    };
    let mut rows: Vec<ColourSweepRow> = Vec::new();
    for k in widths {
        let code = match program {
            SweepProgram::AllNop { .. } => vec![HazardInstr::NOP; len],
            SweepProgram::Random { density, .. } => {
                let stages: Vec<usize> = (STAGES + 1 - k.min(STAGES)..=STAGES).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
                random_hazard_program(&mut rng, len, &stages, density)
            }
        };
        let report = run_colour_frame(&ColourFrame::new(k, code), seed)?;
        let nop_time = run_colour_frame(&ColourFrame::new(k, vec![HazardInstr::NOP; len]), seed)?.end_time;
        let overhead_delta = rows.last().map_or(SimTime::ZERO, |p| nop_time.saturating_sub(p.nop_time));
        rows.push(ColourSweepRow { report, nop_time, overhead_delta });
    }
    Ok(rows)
}

pub fn write_colour_csv<W: Write>(rows: &[ColourSweepRow], w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["k".to_string(), "hazard_stages".to_string()];
    header.extend((1..=STAGES).map(|s| format!("executed_s{s}")));
    header.extend((1..=STAGES).map(|s| format!("discarded_s{s}")));
    header.extend(
        ["hazards_raised", "hazards_accepted", "retired", "oracle_match", "end_time_ns", "nop_time_ns", "overhead_delta_ns"]
            .map(String::from),
    );
    out.write_record(&header)?;
    for row in rows {
        let r = &row.report;
        let stages: Vec<String> = r.hazard_stages.iter().map(|s| s.to_string()).collect();
        let mut rec = vec![r.k.to_string(), stages.join(" ")];
        rec.extend(r.executed.iter().map(|c| c.to_string()));
        rec.extend(r.discarded.iter().map(|c| c.to_string()));
        rec.extend([
            r.hazards_raised.to_string(),
            r.hazards_accepted.to_string(),
            r.trace.len().to_string(),
            r.matches_oracle().to_string(),
            format!("{:.1}", r.end_time.as_ns()),
            format!("{:.1}", row.nop_time.as_ns()),
            format!("{:.1}", row.overhead_delta.as_ns()),
        ]);
        out.write_record(&rec)?;
    }
    out.flush()
}
