#![allow(dead_code)]

use samips::arch::{oracle_run, DelaySlot, OracleRun};
use samips::experiments::corpus;
use samips::hazards::HazardImpl;
use samips::isa::{assemble, ExeMode, MemoryImage};
use samips::kernel::SimTime;
use samips::pipeline::{run_program, InterruptScheme, PipelineRun, ProcessorConfig};

pub const INTERRUPTS: &str = include_str!("../programs/interrupts.s");
pub const INTERRUPTS_SYS: &str = include_str!("../programs/interrupts_sys.s");

pub fn corpus_images() -> Vec<(&'static str, MemoryImage)> {
    corpus::PROGRAMS.iter().map(|(n, s)| (*n, assemble(s).unwrap_or_else(|e| panic!("{n}: {e}")))).collect()
}

pub fn image(src: &str) -> MemoryImage {
    assemble(src).unwrap()
}

/// {DHDQ, DHDT} x {Original, Optimized} x {On, Off}.
pub fn config_matrix() -> Vec<ProcessorConfig> {
    let mut out = Vec::new();
    for hazard_impl in [HazardImpl::Dhdq, HazardImpl::Dhdt] {
        for exe in [ExeMode::Original, ExeMode::Optimized] {
            for delay_slot in [DelaySlot::On, DelaySlot::Off] {
                out.push(ProcessorConfig { hazard_impl, delay_slot, ..ProcessorConfig::default() }.with_exe_mode(exe));
            }
        }
    }
    out
}

/// Pins asserted every `gap_ns`, cycling through all six.
pub fn pin_train(count: u64, gap_ns: u64, start_ns: u64) -> Vec<(SimTime, u8)> {
    (0..count).map(|k| (SimTime::ns(start_ns + k * gap_ns), (k % 6) as u8)).collect()
}

pub fn with_scheme(cfg: ProcessorConfig, scheme: InterruptScheme) -> ProcessorConfig {
    ProcessorConfig { interrupt_scheme: scheme, ..cfg }
}

/// Replays the interrupts the pipeline took, at the same retire counts.
pub fn oracle_for(image: &MemoryImage, cfg: &ProcessorConfig, run: &PipelineRun) -> OracleRun {
    let schedule: Vec<(usize, u8)> = run.interrupts.iter().map(|r| (r.after_retired, r.pin)).collect();
    oracle_run(image, 5_000_000, cfg.delay_slot, &schedule).unwrap()
}

/// Differences between a pipeline run and the oracle, empty when they agree.
pub fn divergence(run: &PipelineRun, oracle: &OracleRun) -> Vec<String> {
    let mut out = Vec::new();
    if !oracle.halted {
        out.push("oracle did not halt".into());
    }
    if !run.state.same_registers(&oracle.state) {
        out.push(format!("registers\n{}\nvs oracle\n{}", run.state.dump(), oracle.state.dump()));
    }
    if run.state.pc != oracle.state.pc {
        out.push(format!("halt pc {:#x} vs {:#x}", run.state.pc, oracle.state.pc));
    }
    if run.memory != oracle.memory {
        out.push("memory".into());
    }
    if run.trace != oracle.trace {
        let first = run.trace.iter().zip(&oracle.trace).position(|(a, b)| a != b);
        out.push(format!(
            "trace lengths {} vs {}, first difference at {:?}",
            run.trace.len(),
            oracle.trace.len(),
            first
        ));
    }
    if run.interrupts != oracle.interrupts {
        out.push(format!("interrupts {:?} vs {:?}", run.interrupts, oracle.interrupts));
    }
    out
}

pub fn run_checked(name: &str, image: &MemoryImage, cfg: &ProcessorConfig) -> PipelineRun {
    let run = run_program(cfg, image).unwrap_or_else(|e| panic!("{name} {cfg:?}: {e}"));
    let oracle = oracle_for(image, cfg, &run);
    let diff = divergence(&run, &oracle);
    assert!(diff.is_empty(), "{name} seed {} {:?}/{:?}/{:?}/{:?}: {}", cfg.seed, cfg.hazard_impl, cfg.exe_mode, cfg.delay_slot, cfg.interrupt_scheme, diff.join("; "));
    run
}

pub fn program(name: &str) -> MemoryImage {
    image(corpus::source(name).unwrap_or_else(|| panic!("no corpus program {name}")))
}
