//! Post-run analysis of event logs: per-block busy/wait/idle time, channel
//! utilisation, dynamic instruction mix, and the synchronous versus
//! asynchronous pipeline latency and throughput formulas.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::RetireRecord;
use crate::isa::Group;
use crate::kernel::{Direction, EventLog, Round, SimTime};
use crate::pipeline::BlockPorts;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("block {block} names channel {channel}, which is not in the log")]
    UnknownChannel { block: String, channel: String },
    #[error("stage {0} has no latency samples")]
    EmptySample(usize),
    #[error("no pipeline stages given")]
    NoStages,
}

/// A functional block and the channels it owns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl BlockSpec {
    pub fn new<S: Into<String>>(name: S, inputs: &[&str], outputs: &[&str]) -> Self {
        BlockSpec {
            name: name.into(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl From<&BlockPorts> for BlockSpec {
    fn from(p: &BlockPorts) -> Self {
        BlockSpec { name: p.name.clone(), inputs: p.inputs.clone(), outputs: p.outputs.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLatency {
    pub t_busy: SimTime,
    pub t_wait: SimTime,
    pub t_idle: SimTime,
    pub t_total: SimTime,
    /// Channels whose last round was cut off by the end of the log and left out.
    pub partial: Vec<String>,
}

/// Half-open interval in ticks.
type Span = (u64, u64);

/// Total length covered by `spans`, overlaps counted once.
fn covered(spans: &mut [Span]) -> u64 {
    spans.sort_unstable();
    let mut total = 0;
    let mut open: Option<Span> = None;
    for &(a, b) in spans.iter().filter(|(a, b)| b > a) {
        open = match open {
            Some((s, e)) if a <= e => Some((s, e.max(b))),
            Some((s, e)) => {
                total += e - s;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    total + open.map_or(0, |(s, e)| e - s)
}

fn channel_rounds<'a>(
    log: &EventLog,
    rounds: &'a [Vec<Round>],
    block: &BlockSpec,
    names: &[String],
) -> Result<Vec<(&'a [Round], String)>, MetricsError> {
    names
        .iter()
        .map(|n| match log.channel_id(n) {
            Some(id) => Ok((rounds[id.0 as usize].as_slice(), n.clone())),
            None => Err(MetricsError::UnknownChannel { block: block.name.clone(), channel: n.clone() }),
        })
        .collect()
}

/// Busy, wait and idle time of one block over `[0, t_total]`.
///
/// Output requests are grouped into transfer rounds: a round closes when a
/// channel already in it requests again. A round waits from its last output
/// request to its last output acknowledge, split as
/// `(MAX ack - MIN ack) + (MIN ack - MAX req)`. Idle time is the union of
/// `[req, ack]` on pull inputs, less any part already counted as waiting.
/// Busy time is what remains.
pub fn block_latency(log: &EventLog, block: &BlockSpec, t_total: SimTime) -> Result<BlockLatency, MetricsError> {
    let all = log.rounds_by_channel();
    let outputs = channel_rounds(log, &all, block, &block.outputs)?;
    let inputs = channel_rounds(log, &all, block, &block.inputs)?;
    let end = t_total.as_ticks();
    let clamp = |(a, b): Span| (a.min(end), b.min(end));
    let mut partial = Vec::new();

    let mut requests: Vec<(u64, usize, &Round)> = outputs
        .iter()
        .enumerate()
        .flat_map(|(k, (rs, _))| rs.iter().map(move |r| (r.req_up.as_ticks(), k, r)))
        .collect();
    requests.sort_by_key(|&(t, k, _)| (t, k));

    let mut waits: Vec<Span> = Vec::new();
    let mut current: BTreeMap<usize, &Round> = BTreeMap::new();
    let mut close = |round: &BTreeMap<usize, &Round>, partial: &mut Vec<String>| {
        if round.is_empty() {
            return;
        }
        let missing: Vec<usize> = round.iter().filter(|(_, r)| r.ack_up.is_none()).map(|(k, _)| *k).collect();
        if !missing.is_empty() {
            partial.extend(missing.into_iter().map(|k| outputs[k].1.clone()));
            return;
        }
        let max_req = round.values().map(|r| r.req_up.as_ticks()).max().unwrap_or(0);
        let acks = round.values().filter_map(|r| r.ack_up.map(|t| t.as_ticks()));
        let (min_ack, max_ack) = acks.fold((u64::MAX, 0), |(lo, hi), t| (lo.min(t), hi.max(t)));
        let first = min_ack as i64 - max_req as i64;
        let second = max_ack as i64 - min_ack as i64;
        let start = max_ack as i64 - (first + second);
        waits.push(clamp((start as u64, max_ack)));
    };
    for (_, k, r) in requests {
        if current.contains_key(&k) {
            close(&current, &mut partial);
            current.clear();
        }
        current.insert(k, r);
    }
    close(&current, &mut partial);

    let mut idles: Vec<Span> = Vec::new();
    for (rs, name) in &inputs {
        let Some(id) = log.channel_id(name) else { continue };
        if log.channels[id.0 as usize].direction != Direction::Pull {
            continue;
        }
        for r in rs.iter() {
            match r.ack_up {
                Some(ack) => idles.push(clamp((r.req_up.as_ticks(), ack.as_ticks()))),
                None => partial.push(name.clone()),
            }
        }
    }

    let t_wait = covered(&mut waits.clone());
    let mut both: Vec<Span> = waits.into_iter().chain(idles).collect();
    let t_idle = covered(&mut both) - t_wait;
    partial.sort();
    partial.dedup();
    Ok(BlockLatency {
        t_busy: SimTime::ticks(end - t_wait - t_idle),
        t_wait: SimTime::ticks(t_wait),
        t_idle: SimTime::ticks(t_idle),
        t_total,
        partial,
    })
}

/// Busy time estimated from an average per-request latency.
pub fn busy_from_average(l_avg: SimTime, n_requests: u64) -> SimTime {
    SimTime::ticks(l_avg.as_ticks() * n_requests)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel: String,
    pub requests: u64,
    pub wait: SimTime,
    pub wait_pct: f64,
    pub idle: SimTime,
    pub idle_pct: f64,
}

fn percent(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Request count, acknowledge wait and idle time of every channel.
///
/// A round cut off by the end of the log counts as a request and runs to
/// `t_total`.
pub fn channel_utilisation(log: &EventLog, t_total: SimTime) -> Vec<ChannelStats> {
    let end = t_total.as_ticks();
    log.rounds_by_channel()
        .iter()
        .zip(&log.channels)
        .map(|(rounds, spec)| {
            let (mut wait, mut active) = (0u64, 0u64);
            for r in rounds {
                let req = r.req_up.as_ticks().min(end);
                wait += r.ack_up.map_or(end, |t| t.as_ticks().min(end)) - req;
                active += r.ack_down.map_or(end, |t| t.as_ticks().min(end)) - req;
            }
            let idle = end.saturating_sub(active);
            ChannelStats {
                channel: spec.id.clone(),
                requests: rounds.len() as u64,
                wait: SimTime::ticks(wait),
                wait_pct: percent(wait, end),
                idle: SimTime::ticks(idle),
                idle_pct: percent(idle, end),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixRow {
    pub group: Group,
    pub count: u64,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionMix {
    pub total: u64,
    pub rows: Vec<MixRow>,
}

impl InstructionMix {
    pub fn count(&self, group: Group) -> u64 {
        self.rows.iter().find(|r| r.group == group).map_or(0, |r| r.count)
    }
}

/// Histogram of retired instructions by group. Reserved encodings count as
/// [`Group::Special`].
pub fn instruction_mix(trace: &[RetireRecord]) -> InstructionMix {
    let mut counts: BTreeMap<Group, u64> = Group::ALL.iter().map(|g| (*g, 0)).collect();
    for r in trace {
        *counts.entry(r.mnemonic.map_or(Group::Special, |m| m.group())).or_default() += 1;
    }
    let total = trace.len() as u64;
    let rows = Group::ALL
        .iter()
        .map(|g| MixRow { group: *g, count: counts[g], percent: percent(counts[g], total) })
        .collect();
    InstructionMix { total, rows }
}

/// Stage latencies for the latency/throughput formulas, in any time unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StageLatencies {
    /// One latency per stage.
    Fixed(Vec<f64>),
    /// A set of observed latencies per stage.
    Variable(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineFigures {
    pub latency_sync: f64,
    pub latency_async: f64,
    pub throughput_sync: f64,
    pub throughput_async: f64,
}

fn max_of(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Latency and throughput of a clocked pipeline against a self-timed one.
///
/// A clocked stage always takes the worst case: `n * max` latency and
/// `1 / max` throughput. A self-timed pipeline takes the sum of its stage
/// latencies, and with variable stages its throughput follows the slowest
/// stage average instead of the slowest single sample. Variable-mode latency
/// uses the per-stage worst case (clocked) and average (self-timed).
pub fn pipeline_figures(stages: &StageLatencies) -> Result<PipelineFigures, MetricsError> {
    let (worst, typical): (Vec<f64>, Vec<f64>) = match stages {
        StageLatencies::Fixed(v) => (v.clone(), v.clone()),
        StageLatencies::Variable(sets) => {
            let mut worst = Vec::with_capacity(sets.len());
            let mut avg = Vec::with_capacity(sets.len());
            for (i, s) in sets.iter().enumerate() {
                if s.is_empty() {
                    return Err(MetricsError::EmptySample(i));
                }
                worst.push(max_of(s.iter().copied()));
                avg.push(s.iter().sum::<f64>() / s.len() as f64);
            }
            (worst, avg)
        }
    };
    if worst.is_empty() {
        return Err(MetricsError::NoStages);
    }
    let n = worst.len() as f64;
    let slowest = max_of(worst.iter().copied());
    Ok(PipelineFigures {
        latency_sync: n * slowest,
        latency_async: typical.iter().sum(),
        throughput_sync: 1.0 / slowest,
        throughput_async: 1.0 / max_of(typical.iter().copied()),
    })
}

/// Latency decomposition for every block of a run.
pub fn all_block_latencies(
    log: &EventLog,
    blocks: &[BlockSpec],
    t_total: SimTime,
) -> Result<Vec<(String, BlockLatency)>, MetricsError> {
    blocks.iter().map(|b| Ok((b.name.clone(), block_latency(log, b, t_total)?))).collect()
}

pub fn write_channel_csv<W: Write>(stats: &[ChannelStats], w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["channel", "requests", "wait_ns", "wait_pct", "idle_ns", "idle_pct"])?;
    for s in stats {
        out.write_record([
            s.channel.clone(),
            s.requests.to_string(),
            format!("{:.1}", s.wait.as_ns()),
            format!("{:.1}", s.wait_pct),
            format!("{:.1}", s.idle.as_ns()),
            format!("{:.1}", s.idle_pct),
        ])?;
    }
    out.flush()
}

pub fn write_mix_csv<W: Write>(mix: &InstructionMix, w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "count", "percent"])?;
    for r in &mix.rows {
        out.write_record([format!("{:?}", r.group), r.count.to_string(), format!("{:.2}", r.percent)])?;
    }
    out.write_record(["Total".to_string(), mix.total.to_string(), "100.00".to_string()])?;
    out.flush()
}

/// Bar-chart data: one row per block with its busy, wait and idle times in ns.
pub fn write_latency_plot_csv<W: Write>(blocks: &[(String, BlockLatency)], w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["block", "busy_ns", "wait_ns", "idle_ns"])?;
    for (name, l) in blocks {
        out.write_record([
            name.clone(),
            format!("{:.1}", l.t_busy.as_ns()),
            format!("{:.1}", l.t_wait.as_ns()),
            format!("{:.1}", l.t_idle.as_ns()),
        ])?;
    }
    out.flush()
}

/// Everything above in one JSON document.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub t_total: SimTime,
    pub blocks: Vec<(String, BlockLatency)>,
    pub channels: Vec<ChannelStats>,
    pub mix: InstructionMix,
}

impl RunReport {
    pub fn build(log: &EventLog, blocks: &[BlockSpec], trace: &[RetireRecord], t_total: SimTime) -> Result<Self, MetricsError> {
        Ok(RunReport {
            t_total,
            blocks: all_block_latencies(log, blocks, t_total)?,
            channels: channel_utilisation(log, t_total),
            mix: instruction_mix(trace),
        })
    }

    pub fn write_json<W: Write>(&self, w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(io::Error::other)
    }
}
