use std::fmt;

use thiserror::Error;

use super::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdKind {
    Channel,
    Process,
    Producer,
    Consumer,
}

impl fmt::Display for IdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdKind::Channel => "channel",
            IdKind::Process => "process",
            IdKind::Producer => "producer of",
            IdKind::Consumer => "consumer of",
        })
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("channel `{0}` lacks a producer or a consumer")]
    DanglingChannel(String),
    #[error("duplicate {kind} `{id}`")]
    DuplicateId { kind: IdKind, id: String },
    #[error("process `{process}` names unknown channel `{channel}`")]
    UnknownChannel { process: String, channel: String },
    #[error("process `{process}` has no port on `{channel}`")]
    UndeclaredPort { process: String, channel: String },
    #[error("port on `{channel}` expects {requested} bits, channel carries {width}")]
    PortWidth { channel: String, width: u32, requested: u32 },
    #[error("payload {payload:#x} does not fit {width}-bit channel `{channel}`")]
    WidthMismatch { channel: String, width: u32, payload: u128 },
    #[error("protocol violation on `{0}`: previous handshake still open")]
    ProtocolViolation(String),
    #[error("arbiter needs 2..=4 channels, got {0}")]
    ArbiterArity(usize),
    #[error("livelock: event budget exhausted at {0} without time advancing")]
    Livelock(SimTime),
    #[error("process `{process}` faulted: {message}")]
    Fault { process: String, message: String },
}
