//! Benchmark programs, the forwarding and colour-algorithm experiment frames,
//! and the trace tooling they share.

pub mod colour;
pub mod corpus;
pub mod forwarding;
pub mod traces;

use thiserror::Error;

use crate::hazards::HazardError;
use crate::kernel::SimError;

pub use colour::{
    colour_sweep, control_flow_oracle, hazard_targets, random_hazard_program, run_colour_frame, write_colour_csv,
    ColourFrame, ColourReport, ColourSweepRow, HazardInstr, SweepProgram,
};
pub use forwarding::{
    forwarding_sweep, run_forwarding_frame, write_forwarding_csv, ForwardingFrame, ForwardingReport, OperandStats,
};
pub use traces::{dense_trace, latest_writes, regread_trace, RegRead};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Shape(#[from] HazardError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("the trace has no reads")]
    EmptyTrace,
    #[error("the program is empty")]
    EmptyProgram,
    #[error("colour width {0} outside 1..=16")]
    ColourWidth(usize),
    #[error("{stages} stages raise hazards but only {k} colour bits are available")]
    InsufficientColours { k: usize, stages: usize },
    #[error("frame deadlocked on {0:?}")]
    Deadlock(Vec<String>),
    #[error("frame exceeded its event budget")]
    EventLimit,
}
