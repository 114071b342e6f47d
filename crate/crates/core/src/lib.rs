//! Clockless discrete-event model of an asynchronous MIPS R3000 pipeline.
//!
//! Every functional block is a process that talks to its neighbours only
//! through four-phase handshake channels. The [`kernel`] runs those
//! processes in simulated time and records each handshake phase; the
//! [`pipeline`] wires the processor, [`arch`] provides a sequential
//! reference interpreter, and [`metrics`] turns event logs into latency
//! figures.

pub mod arch;
pub mod cli;
pub mod experiments;
pub mod hazards;
pub mod isa;
pub mod kernel;
pub mod metrics;
pub mod pipeline;
