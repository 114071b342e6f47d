//! Forwarding frame: a register bank, forwarding unit and operand muxes as
//! real processes, with every other stage reduced to a fixed delay.
//!
//! Stage 1 feeds the trace, stage 2 is the register bank, stage 3 executes,
//! and stages 3..n−1 each forward their result on `F{d}` to the read `d`
//! younger. Stage n writes the register bank.

use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use futures::future::try_join_all;
use serde::{Deserialize, Serialize};

use super::traces::RegRead;
use super::ExperimentError;
use crate::hazards::{storage_cost, FwCase, FwPair, Fraq, HazardImpl, Shape, StorageKind};
use crate::kernel::{
    create_simulator, ArbiterPolicy, ChannelSpec, Ctx, EventLog, ProcessSpec, RunLimits, RunOutcome, SimError, SimTime,
};

/// Execution stage of every frame.
pub const EXEC_STAGE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardingFrame {
    pub n: usize,
    pub stage_latency: SimTime,
    pub regbank_latency: SimTime,
    pub fwunit_latency: SimTime,
    pub mux_latency: SimTime,
    pub hazard_impl: HazardImpl,
    pub trace: Vec<RegRead>,
}

impl ForwardingFrame {
    pub fn new(n: usize, trace: Vec<RegRead>) -> Self {
        ForwardingFrame {
            n,
            stage_latency: SimTime::ns(20),
            regbank_latency: SimTime::ns(12),
            fwunit_latency: SimTime::ticks(5),
            mux_latency: SimTime::ticks(3),
            hazard_impl: HazardImpl::Dhdq,
            trace,
        }
    }

    pub fn shape(&self) -> Result<Shape, ExperimentError> {
        Ok(Shape::new(self.n, EXEC_STAGE)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OperandStats {
    /// Operands whose case was anything but `Non`, waits for write-back included.
    pub forwarded: u64,
    pub percent: f64,
    /// Reads per forwarding distance; index 0 counts `Non`.
    pub by_distance: Vec<u64>,
    /// Mean time from the register bank accepting the read to the operand
    /// reaching the execution stage, over forwarded operands.
    pub avg_latency: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardingReport {
    pub n: usize,
    pub reads: u64,
    pub storage_cost: u32,
    pub operands: [OperandStats; 2],
    /// Forwarding decisions in read order, as sent to the forwarding unit.
    pub cases: Vec<FwPair>,
    pub fwunit_avg_idle: SimTime,
    /// Mean time from accepting a read to offering its forwarding control.
    pub regbank_avg_latency: SimTime,
    /// Operands that reached execution with a value other than the trace's writer.
    pub value_mismatches: u64,
    pub end_time: SimTime,
    #[serde(skip)]
    pub log: EventLog,
}

#[derive(Default)]
struct FrameTally {
    fw_idle: Vec<SimTime>,
    mismatches: u64,
}

const INITIAL_TAG: u32 = 0x100;
const RESULT_TAG: u32 = 0x4000_0000;

fn initial(r: u8) -> u32 {
    if r == 0 { 0 } else { INITIAL_TAG + r as u32 }
}

/// Value each read should observe on its two sources.
fn expected_operands(trace: &[RegRead]) -> Vec<(u32, u32)> {
    let mut regs: Vec<u32> = (0..32).map(initial).collect();
    trace
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let v = (regs[r.rs as usize], regs[r.rt as usize]);
            if r.wd != 0 {
                regs[r.wd as usize] = RESULT_TAG + k as u32;
            }
            v
        })
        .collect()
}

fn pack_read(r: RegRead) -> u128 {
    (r.rs as u128) << 10 | (r.rt as u128) << 5 | r.wd as u128
}

fn unpack_read(w: u128) -> RegRead {
    RegRead { rs: (w >> 10 & 31) as u8, rt: (w >> 5 & 31) as u8, wd: (w & 31) as u8 }
}

fn pack_token(seq: usize, wd: u8) -> u128 {
    (seq as u128) << 5 | wd as u128
}

fn unpack_token(w: u128) -> (usize, u8) {
    ((w >> 5) as usize, (w & 31) as u8)
}

fn pack_cases(p: FwPair) -> u128 {
    (p.fw0.wire() as u128) << 4 | p.fw1.wire() as u128
}

fn unpack_cases(w: u128) -> FwPair {
    FwPair { fw0: FwCase::from_wire((w >> 4 & 15) as u8), fw1: FwCase::from_wire((w & 15) as u8) }
}

fn fwd_name(d: usize) -> String {
    format!("F{d}")
}

fn stage_link(s: usize) -> String {
    format!("S{s}S{}", s + 1)
}

fn channels(shape: Shape) -> Vec<ChannelSpec> {
    let mut out = vec![
        ChannelSpec::push("RegRead", 15),
        ChannelSpec::push("RegWrite", 37),
        ChannelSpec::push("FRACtrl", shape.in_flight() as u32),
        ChannelSpec::push("FWCtrl", 8),
        ChannelSpec::push("EXCtrl", 37),
    ];
    for k in 0..2 {
        out.push(ChannelSpec::push(format!("ReadData{k}"), 32));
        out.push(ChannelSpec::push(format!("FOp{k}"), 32));
        out.push(ChannelSpec::push(format!("Op{k}"), 32));
    }
    for d in 1..=shape.in_flight() {
        out.push(ChannelSpec::push(fwd_name(d), 32));
    }
    for s in EXEC_STAGE..shape.n() {
        out.push(ChannelSpec::push(stage_link(s), 37));
    }
    out
}

async fn feeder(ctx: Ctx, trace: Arc<Vec<RegRead>>) -> Result<(), SimError> {
    let out = ctx.output("RegRead")?;
    for r in trace.iter() {
        ctx.wait("stage").await;
        out.send(pack_read(*r)).await?;
    }
    Ok(())
}

async fn register_bank(ctx: Ctx, frame: Arc<ForwardingFrame>, shape: Shape) -> Result<(), SimError> {
    let read_in = ctx.input("RegRead")?;
    let write_in = ctx.input("RegWrite")?;
    let fra = ctx.output("FRACtrl")?;
    let fw = ctx.output("FWCtrl")?;
    let exctrl = ctx.output("EXCtrl")?;
    let data = [ctx.output("ReadData0")?, ctx.output("ReadData1")?];
    let mut detector = frame.hazard_impl.build(shape);
    let mut fraq = Fraq::new(shape);
    let mut regs: Vec<u32> = (0..32).map(initial).collect();
    // Writers whose write-back has not arrived: (seq, wd, snapshot).
    let mut pending = std::collections::VecDeque::new();
    let reach = shape.max_distance() as usize;

    async fn take_write(
        write_in: &crate::kernel::Input,
        pending: &mut std::collections::VecDeque<(usize, u8, u8)>,
        detector: &mut Box<dyn crate::hazards::HazardDetector + Send>,
        regs: &mut [u32],
        ctx: &Ctx,
    ) -> Result<(), SimError> {
        let word = write_in.recv().await?;
        let (rd, value) = ((word >> 32) as u8 & 31, word as u32);
        let (_, wd, snap) = pending.pop_front().ok_or_else(|| ctx.fault("register write with no writer pending"))?;
        if wd != rd {
            return Err(ctx.fault(format!("write to ${rd}, expected ${wd}")));
        }
        detector.write(rd, snap).map_err(|e| ctx.fault(e.to_string()))?;
        regs[rd as usize] = value;
        Ok(())
    }

    for seq in 0..frame.trace.len() {
        let r = unpack_read(read_in.recv().await?);
        ctx.wait("detect").await;
        let (cases, snap) = detector.read(r.rs, r.rt, r.wd);
        let bits = fraq.fraq_step(r.wd != 0);
        if r.wd != 0 {
            pending.push_back((seq, r.wd, snap));
        }
        while pending.front().is_some_and(|&(s, _, _)| s + reach <= seq) {
            take_write(&write_in, &mut pending, &mut detector, &mut regs, &ctx).await?;
        }
        let from_bank = |c: FwCase| c == FwCase::Non || c == FwCase::Fwd(shape.max_distance());
        let values = [(r.rs, cases.fw0), (r.rt, cases.fw1)].map(|(src, c)| from_bank(c).then(|| regs[src as usize]));
        let (a, b, c, d, e) = futures::join!(
            fra.send(Fraq::pack(&bits)),
            fw.send(pack_cases(cases)),
            exctrl.send(pack_token(seq, r.wd)),
            async { match values[0] { Some(v) => data[0].send(v as u128).await, None => Ok(()) } },
            async { match values[1] { Some(v) => data[1].send(v as u128).await, None => Ok(()) } },
        );
        a.and(b).and(c).and(d).and(e)?;
    }
    // Let the forwarding unit absorb results nobody younger will read.
    for seq in frame.trace.len().. {
        let bits = fraq.fraq_step(false);
        if !bits.contains(&true) {
            break;
        }
        while pending.front().is_some_and(|&(s, _, _)| s + reach <= seq) {
            take_write(&write_in, &mut pending, &mut detector, &mut regs, &ctx).await?;
        }
        let none = FwPair { fw0: FwCase::Non, fw1: FwCase::Non };
        let (a, b) = futures::join!(fra.send(Fraq::pack(&bits)), fw.send(pack_cases(none)));
        a.and(b)?;
    }
    while !pending.is_empty() {
        take_write(&write_in, &mut pending, &mut detector, &mut regs, &ctx).await?;
    }
    Ok(())
}

async fn forwarding_unit(ctx: Ctx, shape: Shape, tally: Arc<Mutex<FrameTally>>) -> Result<(), SimError> {
    let fra = ctx.input("FRACtrl")?;
    let fw = ctx.input("FWCtrl")?;
    let sources = (1..=shape.in_flight()).map(|d| ctx.input(&fwd_name(d))).collect::<Result<Vec<_>, _>>()?;
    let outs = [ctx.output("FOp0")?, ctx.output("FOp1")?];
    loop {
        let idle_from = ctx.now();
        let bits = Fraq::unpack(fra.recv().await?, shape.in_flight());
        tally.lock().expect("tally").fw_idle.push(ctx.now() - idle_from);
        let cases = unpack_cases(fw.recv().await?);
        let results = try_join_all(sources.iter().zip(&bits).map(|(src, &live)| async move {
            if live { src.recv().await.map(|v| Some(v as u32)) } else { Ok(None) }
        }))
        .await?;
        ctx.wait("route").await;
        let route = |c: FwCase| -> Result<Option<u32>, SimError> {
            match c {
                FwCase::Fwd(d) if (d as usize) <= shape.in_flight() => results[d as usize - 1]
                    .map(Some)
                    .ok_or_else(|| ctx.fault(format!("case {c} without a result in flight"))),
                _ => Ok(None),
            }
        };
        let values = [route(cases.fw0)?, route(cases.fw1)?];
        let (a, b) = futures::join!(
            async { match values[0] { Some(v) => outs[0].send(v as u128).await, None => Ok(()) } },
            async { match values[1] { Some(v) => outs[1].send(v as u128).await, None => Ok(()) } },
        );
        a.and(b)?;
    }
}

fn mux(k: usize) -> ProcessSpec {
    let (read, fwd, op) = (format!("ReadData{k}"), format!("FOp{k}"), format!("Op{k}"));
    let (r, f, o) = (read.clone(), fwd.clone(), op.clone());
    ProcessSpec::new(format!("Mux{k}"), move |ctx| async move {
        let read = ctx.input(&r)?;
        let fwd = ctx.input(&f)?;
        let op = ctx.output(&o)?;
        loop {
            let (_, v) = ctx.arbitrate(&[&read, &fwd]).await?;
            ctx.wait("select").await;
            op.send(v).await?;
        }
    })
    .inputs([read, fwd])
    .outputs([op])
}

/// Stage `s` of the back end. Stage 3 also collects the operands.
async fn back_stage(
    ctx: Ctx,
    s: usize,
    shape: Shape,
    expected: Arc<Vec<(u32, u32)>>,
    tally: Arc<Mutex<FrameTally>>,
) -> Result<(), SimError> {
    let n = shape.n();
    let input = ctx.input(&if s == EXEC_STAGE { "EXCtrl".to_string() } else { stage_link(s - 1) })?;
    let ops = if s == EXEC_STAGE { Some([ctx.input("Op0")?, ctx.input("Op1")?]) } else { None };
    let forward = (s < n).then(|| ctx.output(&fwd_name(s - EXEC_STAGE + 1))).transpose()?;
    let next = (s < n).then(|| ctx.output(&stage_link(s))).transpose()?;
    let write = (s == n).then(|| ctx.output("RegWrite")).transpose()?;
    let total = expected.len();
    loop {
        let word = input.recv().await?;
        let (seq, wd) = unpack_token(word);
        if let Some([op0, op1]) = &ops {
            let (a, b) = futures::join!(op0.recv(), op1.recv());
            let got = (a? as u32, b? as u32);
            if got != expected[seq] {
                tally.lock().expect("tally").mismatches += 1;
            }
        }
        ctx.wait("stage").await;
        let value = RESULT_TAG + seq as u32;
        if let (Some(fwd), Some(next)) = (&forward, &next) {
            let (a, b) = futures::join!(
                async { if wd != 0 { fwd.send(value as u128).await } else { Ok(()) } },
                next.send(word),
            );
            a.and(b)?;
        }
        if let Some(w) = &write {
            if wd != 0 {
                w.send((wd as u128) << 32 | value as u128).await?;
            }
            if seq + 1 == total {
                ctx.halt();
            }
        }
    }
}

fn avg(xs: impl Iterator<Item = u64>) -> SimTime {
    let (sum, n) = xs.fold((0u64, 0u64), |(s, n), x| (s + x, n + 1));
    SimTime::ticks(if n == 0 { 0 } else { (sum as f64 / n as f64).round() as u64 })
}

/// Replays `frame.trace` through the frame and measures the forwarding paths.
pub fn run_forwarding_frame(frame: &ForwardingFrame, seed: u64) -> Result<ForwardingReport, ExperimentError> {
    let shape = frame.shape()?;
    if frame.trace.is_empty() {
        return Err(ExperimentError::EmptyTrace);
    }
    let n = shape.n();
    let tally = Arc::new(Mutex::new(FrameTally::default()));
    let expected = Arc::new(expected_operands(&frame.trace));
    let shared = Arc::new(frame.clone());
    let trace = Arc::new(frame.trace.clone());

    let mut procs = vec![
        ProcessSpec::new("Feeder", move |ctx| feeder(ctx, trace)).outputs(["RegRead"]).delay("stage", frame.stage_latency),
        ProcessSpec::new("RegBank", move |ctx| register_bank(ctx, shared, shape))
            .inputs(["RegRead", "RegWrite"])
            .outputs(["FRACtrl", "FWCtrl", "EXCtrl", "ReadData0", "ReadData1"])
            .delay("detect", frame.regbank_latency),
    ];
    let t = tally.clone();
    procs.push(
        ProcessSpec::new("FWunit", move |ctx| forwarding_unit(ctx, shape, t))
            .inputs(["FRACtrl".to_string(), "FWCtrl".to_string()].into_iter().chain((1..=shape.in_flight()).map(fwd_name)))
            .outputs(["FOp0", "FOp1"])
            .delay("route", frame.fwunit_latency),
    );
    procs.extend((0..2).map(|k| mux(k).delay("select", frame.mux_latency)));
    for s in EXEC_STAGE..=n {
        let (e, t) = (expected.clone(), tally.clone());
        let mut inputs = vec![if s == EXEC_STAGE { "EXCtrl".to_string() } else { stage_link(s - 1) }];
        if s == EXEC_STAGE {
            inputs.extend(["Op0".to_string(), "Op1".to_string()]);
        }
        let outputs = if s < n { vec![fwd_name(s - EXEC_STAGE + 1), stage_link(s)] } else { vec!["RegWrite".to_string()] };
        procs.push(
            ProcessSpec::new(format!("Stage{s}"), move |ctx| back_stage(ctx, s, shape, e, t))
                .inputs(inputs)
                .outputs(outputs)
                .delay("stage", frame.stage_latency),
        );
    }

    let mut sim = create_simulator(procs, channels(shape), ArbiterPolicy::seeded(seed))?;
    let max_events = 200 * frame.trace.len() as u64 + 10_000;
    match sim.run(RunLimits { max_time: SimTime(u64::MAX), max_events })? {
        RunOutcome::Halted => {}
        RunOutcome::Quiescent { blocked } => return Err(ExperimentError::Deadlock(blocked)),
        RunOutcome::MaxEvents | RunOutcome::MaxTime => return Err(ExperimentError::EventLimit),
    }
    let end_time = sim.now();
    let log = sim.take_log();
    let tally = tally.lock().expect("tally");
    Ok(summarise(frame, shape, log, &tally, end_time))
}

fn summarise(frame: &ForwardingFrame, shape: Shape, log: EventLog, tally: &FrameTally, end_time: SimTime) -> ForwardingReport {
    let rounds = log.rounds_by_channel();
    let on = |name: &str| &rounds[log.channel_id(name).expect("frame channel").0 as usize];
    let (reads, fwctrl) = (on("RegRead"), on("FWCtrl"));
    let total = frame.trace.len() as u64;
    let cases: Vec<FwPair> = fwctrl.iter().take(total as usize).filter_map(|r| r.payload).map(unpack_cases).collect();
    let accepted: Vec<u64> = reads.iter().map(|r| r.ack_up.map_or(0, |t| t.as_ticks())).collect();
    let operands = [0, 1].map(|k| {
        let op = on(&format!("Op{k}"));
        let case_of = |p: &FwPair| if k == 0 { p.fw0 } else { p.fw1 };
        let mut by_distance = vec![0u64; shape.max_distance() as usize + 1];
        for p in &cases {
            by_distance[case_of(p).wire() as usize] += 1;
        }
        let forwarded = total - by_distance[0];
        let latencies = cases
            .iter()
            .zip(op.iter().zip(&accepted))
            .filter(|(p, _)| case_of(p).is_forward())
            .map(|(_, (r, &acc))| r.req_up.as_ticks().saturating_sub(acc));
        OperandStats {
            forwarded,
            percent: 100.0 * forwarded as f64 / total as f64,
            by_distance,
            avg_latency: avg(latencies),
        }
    });
    let regbank_avg_latency =
        avg(fwctrl.iter().zip(&accepted).map(|(r, &acc)| r.req_up.as_ticks().saturating_sub(acc)));
    let kind = match frame.hazard_impl {
        HazardImpl::Dhdq => StorageKind::Dhdq,
        HazardImpl::Dhdt => StorageKind::Dhdt,
    };
    ForwardingReport {
        n: shape.n(),
        reads: total,
        storage_cost: storage_cost(kind, shape.n(), shape.i()).expect("validated shape"),
        operands,
        cases,
        fwunit_avg_idle: avg(tally.fw_idle.iter().take(total as usize).map(|t| t.as_ticks())),
        regbank_avg_latency,
        value_mismatches: tally.mismatches,
        end_time,
        log,
    }
}

/// Runs the frame for every depth in `depths` on the same trace.
pub fn forwarding_sweep(
    base: &ForwardingFrame,
    depths: impl IntoIterator<Item = usize>,
    seed: u64,
) -> Result<Vec<ForwardingReport>, ExperimentError> {
    depths.into_iter().map(|n| run_forwarding_frame(&ForwardingFrame { n, ..base.clone() }, seed)).collect()
}

pub fn write_forwarding_csv<W: Write>(rows: &[ForwardingReport], w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "n",
        "reads",
        "storage_cost",
        "op0_forwarded",
        "op0_pct",
        "op0_avg_latency_ns",
        "op1_forwarded",
        "op1_pct",
        "op1_avg_latency_ns",
        "fwunit_avg_idle_ns",
        "regbank_avg_latency_ns",
        "end_time_ns",
    ])?;
    for r in rows {
        let [a, b] = &r.operands;
        out.write_record([
            r.n.to_string(),
            r.reads.to_string(),
            r.storage_cost.to_string(),
            a.forwarded.to_string(),
            format!("{:.2}", a.percent),
            format!("{:.1}", a.avg_latency.as_ns()),
            b.forwarded.to_string(),
            format!("{:.2}", b.percent),
            format!("{:.1}", b.avg_latency.as_ns()),
            format!("{:.1}", r.fwunit_avg_idle.as_ns()),
            format!("{:.1}", r.regbank_avg_latency.as_ns()),
            format!("{:.1}", r.end_time.as_ns()),
        ])?;
    }
    out.flush()
}
