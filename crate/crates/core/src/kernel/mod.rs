//! Deterministic discrete-event runtime for four-phase handshake processes.
//!
//! Process bodies are `async` blocks. Awaiting a channel operation parks the
//! process until the kernel has advanced simulated time to the matching
//! handshake phase; each phase is appended to the [`EventLog`].

mod error;
mod exec;
mod log;
mod time;
mod wire;

pub use error::{IdKind, SimError};
pub use exec::{
    create_simulator, Arbitrate, ArbiterMode, ArbiterPolicy, Behavior, Ctx, HandshakeTiming, Input,
    Output, ProcFuture, ProcessSpec, Recv, RunLimits, RunOutcome, Rx, SendFut, Simulator, Sleep, Tx,
};
pub use log::{ChannelEvent, ChannelId, ChannelSpec, Direction, EventLog, Phase, ProtocolBreak, Round};
pub use time::SimTime;
pub use wire::{mask, BitPacker, BitReader, Wire};
