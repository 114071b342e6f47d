use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Data travels with the request.
    Push,
    /// Data travels with the acknowledge.
    Pull,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub id: String,
    pub width: u32,
    pub direction: Direction,
}

impl ChannelSpec {
    pub fn push(id: impl Into<String>, width: u32) -> Self {
        ChannelSpec { id: id.into(), width, direction: Direction::Push }
    }

    pub fn pull(id: impl Into<String>, width: u32) -> Self {
        ChannelSpec { id: id.into(), width, direction: Direction::Pull }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    ReqUp,
    AckUp,
    ReqDown,
    AckDown,
}

impl Phase {
    pub fn next(self) -> Phase {
        match self {
            Phase::ReqUp => Phase::AckUp,
            Phase::AckUp => Phase::ReqDown,
            Phase::ReqDown => Phase::AckDown,
            Phase::AckDown => Phase::ReqUp,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ReqUp => "ReqUp",
            Phase::AckUp => "AckUp",
            Phase::ReqDown => "ReqDown",
            Phase::AckDown => "AckDown",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelEvent {
    pub time: SimTime,
    pub channel: ChannelId,
    pub phase: Phase,
    pub payload: Option<u128>,
}

/// One completed or partial four-phase cycle on a channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Round {
    pub req_up: SimTime,
    pub ack_up: Option<SimTime>,
    pub req_down: Option<SimTime>,
    pub ack_down: Option<SimTime>,
    pub payload: Option<u128>,
}

impl Round {
    pub fn is_complete(&self) -> bool {
        self.ack_down.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolBreak {
    pub channel: String,
    pub index: usize,
    pub expected: Phase,
    pub found: Phase,
}

#[derive(Serialize)]
struct Record<'a> {
    time_ticks: u64,
    channel: &'a str,
    phase: &'static str,
    payload_hex: String,
}

/// Ordered record of every handshake phase in a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub channels: Vec<ChannelSpec>,
    pub events: Vec<ChannelEvent>,
}

impl EventLog {
    pub fn channel_id(&self, name: &str) -> Option<ChannelId> {
        self.channels.iter().position(|c| c.id == name).map(|i| ChannelId(i as u32))
    }

    pub fn channel_name(&self, id: ChannelId) -> &str {
        &self.channels[id.0 as usize].id
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn end_time(&self) -> SimTime {
        self.events.last().map_or(SimTime::ZERO, |e| e.time)
    }

    pub fn events_on(&self, id: ChannelId) -> impl Iterator<Item = &ChannelEvent> {
        self.events.iter().filter(move |e| e.channel == id)
    }

    pub fn count(&self, name: &str, phase: Phase) -> usize {
        match self.channel_id(name) {
            Some(id) => self.events_on(id).filter(|e| e.phase == phase).count(),
            None => 0,
        }
    }

    /// Per-channel rounds, indexed by channel id.
    pub fn rounds_by_channel(&self) -> Vec<Vec<Round>> {
        let mut out: Vec<Vec<Round>> = vec![Vec::new(); self.channels.len()];
        for e in &self.events {
            let rounds = &mut out[e.channel.0 as usize];
            match e.phase {
                Phase::ReqUp => rounds.push(Round {
                    req_up: e.time,
                    ack_up: None,
                    req_down: None,
                    ack_down: None,
                    payload: e.payload,
                }),
                phase => {
                    if let Some(r) = rounds.last_mut() {
                        match phase {
                            Phase::AckUp => {
                                r.ack_up = Some(e.time);
                                if e.payload.is_some() {
                                    r.payload = e.payload;
                                }
                            }
                            Phase::ReqDown => r.req_down = Some(e.time),
                            Phase::AckDown => r.ack_down = Some(e.time),
                            Phase::ReqUp => unreachable!(),
                        }
                    }
                }
            }
        }
        out
    }

    pub fn rounds(&self, name: &str) -> Vec<Round> {
        match self.channel_id(name) {
            Some(id) => self.rounds_by_channel().swap_remove(id.0 as usize),
            None => Vec::new(),
        }
    }

    /// Checks that every channel cycles ReqUp, AckUp, ReqDown, AckDown in order.
    pub fn check_protocol(&self) -> Result<(), ProtocolBreak> {
        let mut expect = vec![Phase::ReqUp; self.channels.len()];
        for (index, e) in self.events.iter().enumerate() {
            let slot = &mut expect[e.channel.0 as usize];
            if e.phase != *slot {
                return Err(ProtocolBreak {
                    channel: self.channel_name(e.channel).to_string(),
                    index,
                    expected: *slot,
                    found: e.phase,
                });
            }
            *slot = slot.next();
        }
        Ok(())
    }

    fn record(&self, e: &ChannelEvent) -> Record<'_> {
        Record {
            time_ticks: e.time.as_ticks(),
            channel: self.channel_name(e.channel),
            phase: e.phase.as_str(),
            payload_hex: e.payload.map(|p| format!("{p:x}")).unwrap_or_default(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_ticks", "channel", "phase", "payload_hex"])?;
        for e in &self.events {
            let r = self.record(e);
            out.write_record([
                r.time_ticks.to_string().as_str(),
                r.channel,
                r.phase,
                r.payload_hex.as_str(),
            ])?;
        }
        out.flush()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, &self.record(e))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        buf
    }
}
