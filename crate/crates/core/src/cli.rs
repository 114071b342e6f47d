//! Command-line driver: assemble, simulate, compare against the reference
//! interpreter, and run the experiment sweeps.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 divergence, deadlock or
//! event limit.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arch::{oracle_run, DelaySlot, OracleRun};
use crate::experiments::{
    colour_sweep, corpus, dense_trace, forwarding_sweep, regread_trace, write_colour_csv, write_forwarding_csv,
    ExperimentError, ForwardingFrame, SweepProgram,
};
use crate::hazards::HazardImpl;
use crate::isa::{assemble, AsmError, ExeMode, ImageError, MemoryImage};
use crate::kernel::SimTime;
use crate::metrics::{BlockSpec, MetricsError, RunReport};
use crate::pipeline::{run_program, InterruptScheme, PipelineError, PipelineRun, ProcessorConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

const ORACLE_STEPS: usize = 5_000_000;

#[derive(Debug, Parser)]
#[command(name = "samips", version, about = "Asynchronous MIPS pipeline simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble a source file into a memory image.
    Asm {
        source: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run a program on the pipeline and print the final state.
    Run(RunArgs),
    /// Run the pipeline and the reference interpreter and diff them.
    Compare(RunArgs),
    /// Run an experiment sweep and write its CSV table.
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HazardArg {
    Dhdq,
    Dhdt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExeArg {
    Original,
    Optimized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Wb,
    Aau,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Memory image, or assembly source when the name ends in `.s` or `.asm`.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "dhdq")]
    pub hazard_impl: HazardArg,
    #[arg(long, value_enum, default_value = "on")]
    pub delay_slot: Toggle,
    #[arg(long, value_enum, default_value = "original")]
    pub exe_mode: ExeArg,
    #[arg(long, value_enum, default_value = "wb")]
    pub interrupt_scheme: SchemeArg,
    #[arg(long, env = "SAMIPS_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Interrupt pin assertion `<ns>:<pin>`; repeatable.
    #[arg(long = "irq", value_parser = parse_irq)]
    pub irqs: Vec<(SimTime, u8)>,
    /// Event log output, JSON lines when the name ends in `.jsonl`, CSV otherwise.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Metrics report output, JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub max_events: Option<u64>,
    #[arg(long = "debug-corrupt-fwcase", hide = true)]
    pub corrupt_fwcase: bool,
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Forwarding frame over pipeline depths.
    Fwd {
        /// Depths, `5..9` or a single value.
        #[arg(long, value_parser = parse_range, default_value = "5..9")]
        n: RangeInclusive<usize>,
        #[arg(long, value_enum, default_value = "dhdq")]
        hazard_impl: HazardArg,
        /// Take the trace from a corpus program instead of the synthetic generator.
        #[arg(long)]
        program: Option<String>,
        #[arg(long, default_value_t = 2000)]
        len: usize,
        #[arg(long, default_value_t = 0.7)]
        density: f64,
        #[arg(long, env = "SAMIPS_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Colour frame over colour-vector widths.
    Colour {
        #[arg(long, value_parser = parse_range, default_value = "1..5")]
        k: RangeInclusive<usize>,
        #[arg(long, default_value_t = 64)]
        len: usize,
        #[arg(long, default_value_t = 0.15)]
        density: f64,
        /// Use an all-NOP program.
        #[arg(long)]
        nop: bool,
        #[arg(long, env = "SAMIPS_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Asm(#[from] AsmError),
    #[error("{0}")]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Metrics(#[from] MetricsError),
    #[error("unknown corpus program `{0}`")]
    UnknownProgram(String),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Experiment(#[from] ExperimentError),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Pipeline(_) | CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Experiment(ExperimentError::Deadlock(_) | ExperimentError::EventLimit) => EXIT_DIVERGED,
            _ => EXIT_INPUT,
        }
    }
}

fn parse_irq(s: &str) -> Result<(SimTime, u8), String> {
    let (t, pin) = s.split_once(':').ok_or("expected <ns>:<pin>")?;
    let t: u64 = t.trim().parse().map_err(|e| format!("time: {e}"))?;
    let pin: u8 = pin.trim().parse().map_err(|e| format!("pin: {e}"))?;
    if pin > 5 {
        return Err(format!("pin {pin} outside 0..=5"));
    }
    Ok((SimTime::ns(t), pin))
}

fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
    let r = match s.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.trim_start_matches('='))?,
        None => num(s)?..=num(s)?,
    };
    if r.is_empty() {
        return Err(format!("empty range {s}"));
    }
    Ok(r)
}

impl RunArgs {
    pub fn config(&self) -> ProcessorConfig {
        let exe = match self.exe_mode {
            ExeArg::Original => ExeMode::Original,
            ExeArg::Optimized => ExeMode::Optimized,
        };
        let base = ProcessorConfig {
            hazard_impl: hazard(self.hazard_impl),
            delay_slot: match self.delay_slot {
                Toggle::On => DelaySlot::On,
                Toggle::Off => DelaySlot::Off,
            },
            interrupt_scheme: match self.interrupt_scheme {
                SchemeArg::Wb => InterruptScheme::Wb,
                SchemeArg::Aau => InterruptScheme::Aau,
            },
            seed: self.seed,
            interrupts: self.irqs.clone(),
            corrupt_fwcase: self.corrupt_fwcase,
            ..ProcessorConfig::default()
        }
        .with_exe_mode(exe);
        match self.max_events {
            Some(max_events) => ProcessorConfig { max_events, ..base },
            None => base,
        }
    }
}

fn hazard(h: HazardArg) -> HazardImpl {
    match h {
        HazardArg::Dhdq => HazardImpl::Dhdq,
        HazardArg::Dhdt => HazardImpl::Dhdt,
    }
}

/// Loads an image, assembling it first when it is a source file.
pub fn load_program(path: &Path) -> Result<MemoryImage, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("s" | "asm") => Ok(assemble(&text)?),
        _ => Ok(MemoryImage::from_text(&text)?),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Write { path: path.into(), source })
}

fn written(path: &Path, r: std::io::Result<()>) -> Result<(), CliError> {
    r.map_err(|source| CliError::Write { path: path.into(), source })
}

fn write_outputs(args: &RunArgs, run: &PipelineRun) -> Result<(), CliError> {
    if let Some(path) = &args.trace {
        let w = create(path)?;
        let jsonl = path.extension().is_some_and(|e| e == "jsonl");
        written(path, if jsonl { run.log.write_jsonl(w) } else { run.log.write_csv(w) })?;
    }
    if let Some(path) = &args.report {
        let blocks: Vec<BlockSpec> = run.blocks.iter().map(BlockSpec::from).collect();
        let report = RunReport::build(&run.log, &blocks, &run.trace, run.end_time)?;
        written(path, report.write_json(create(path)?))?;
    }
    Ok(())
}

/// First difference between a pipeline run and the reference interpreter.
pub fn first_divergence(run: &PipelineRun, oracle: &OracleRun) -> Option<String> {
    if let Some(i) = (0..run.trace.len().max(oracle.trace.len())).find(|&i| run.trace.get(i) != oracle.trace.get(i)) {
        return Some(format!(
            "retire trace differs at instruction {i}: pipeline {:?}, oracle {:?}",
            run.trace.get(i),
            oracle.trace.get(i)
        ));
    }
    if run.interrupts != oracle.interrupts {
        return Some(format!("interrupts: pipeline {:?}, oracle {:?}", run.interrupts, oracle.interrupts));
    }
    if let Some(r) = (0..32).find(|&r| run.state.regs[r] != oracle.state.regs[r]) {
        return Some(format!("${r}: pipeline {:#010x}, oracle {:#010x}", run.state.regs[r], oracle.state.regs[r]));
    }
    if !run.state.same_registers(&oracle.state) {
        return Some(format!("HI/LO or CP0 differ\npipeline:\n{}\noracle:\n{}", run.state.dump(), oracle.state.dump()));
    }
    if run.memory != oracle.memory {
        let (a, b) = (run.memory.image(), oracle.memory.image());
        let addr = a.words().chain(b.words()).map(|(addr, _)| addr).find(|&addr| a.word(addr) != b.word(addr));
        return Some(match addr {
            Some(addr) => format!("memory at {addr:#010x}: pipeline {:#010x}, oracle {:#010x}", a.word(addr), b.word(addr)),
            None => "memory differs".to_string(),
        });
    }
    if run.state.pc != oracle.state.pc {
        return Some(format!("halt pc: pipeline {:#010x}, oracle {:#010x}", run.state.pc, oracle.state.pc));
    }
    None
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let image = load_program(&args.input)?;
    let run = run_program(&args.config(), &image)?;
    write_outputs(args, &run)?;
    let _ = writeln!(out, "{}", run.state.dump());
    let _ = writeln!(out, "retired {} instructions in {}", run.trace.len(), run.end_time);
    Ok(())
}

fn cmd_compare(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let image = load_program(&args.input)?;
    let cfg = args.config();
    let run = run_program(&cfg, &image)?;
    write_outputs(args, &run)?;
    let schedule: Vec<(usize, u8)> = run.interrupts.iter().map(|r| (r.after_retired, r.pin)).collect();
    let oracle = oracle_run(&image, ORACLE_STEPS, cfg.delay_slot, &schedule).map_err(|e| CliError::Oracle(e.to_string()))?;
    if !oracle.halted {
        return Err(CliError::Oracle(format!("no halt within {ORACLE_STEPS} instructions")));
    }
    match first_divergence(&run, &oracle) {
        Some(diff) => Err(CliError::Diverged(diff)),
        None => {
            let _ = writeln!(out, "match: {} instructions, {} interrupts", run.trace.len(), run.interrupts.len());
            Ok(())
        }
    }
}

fn sweep_output(path: &Option<PathBuf>, out: &mut dyn Write, emit: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            written(p, emit(&mut w))
        }
        None => written(Path::new("<stdout>"), emit(out)),
    }
}

fn cmd_experiment(exp: &Experiment, out: &mut dyn Write) -> Result<(), CliError> {
    match exp {
        Experiment::Fwd { n, hazard_impl, program, len, density, seed, out: path } => {
            let trace = match program {
                Some(name) => {
                    let src = corpus::source(name).ok_or_else(|| CliError::UnknownProgram(name.clone()))?;
                    let image = assemble(src)?;
                    let run = oracle_run(&image, ORACLE_STEPS, DelaySlot::On, &[]).map_err(|e| CliError::Oracle(e.to_string()))?;
                    regread_trace(&image, &run.trace)
                }
                None => dense_trace(&mut ChaCha8Rng::seed_from_u64(*seed), *len, 8, density.clamp(0.0, 1.0), 6),
            };
            let base = ForwardingFrame { hazard_impl: hazard(*hazard_impl), ..ForwardingFrame::new(*n.start(), trace) };
            let rows = forwarding_sweep(&base, n.clone(), *seed)?;
            sweep_output(path, out, |w| write_forwarding_csv(&rows, w))
        }
        Experiment::Colour { k, len, density, nop, seed, out: path } => {
            let program = if *nop {
                SweepProgram::AllNop { len: *len }
            } else {
                SweepProgram::Random { len: *len, density: density.clamp(0.0, 1.0) }
            };
            let rows = colour_sweep(k.clone(), program, *seed)?;
            sweep_output(path, out, |w| write_colour_csv(&rows, w))
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Asm { source, out: path } => {
            let text = std::fs::read_to_string(source).map_err(|e| CliError::Read { path: source.clone(), source: e })?;
            let image = assemble(&text)?;
            image.store(path)?;
            let _ = writeln!(out, "{} words, entry {:#010x}", image.len(), image.entry);
            Ok(())
        }
        Command::Run(args) => cmd_run(args, out),
        Command::Compare(args) => cmd_compare(args, out),
        Command::Experiment(exp) => cmd_experiment(exp, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{rendered}") } else { write!(out, "{rendered}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
