//! One PASS/FAIL line per acceptance criterion; exits non-zero on any failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samips::arch::{DelaySlot, ExcCode};
use samips::experiments::*;
use samips::hazards::*;
use samips::isa::{decode, Decoded, MemoryImage, DATA_BASE};
use samips::kernel::{ChannelEvent, ChannelId, ChannelSpec, EventLog, Phase, SimTime};
use samips::metrics::*;
use samips::pipeline::{run_program, Effect, InterruptScheme, PipelineRun, ProcessorConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn storage_table() -> Outcome {
    let dhdt: Vec<u32> = (5..=9).map(|n| storage_cost(StorageKind::Dhdt, n, 3).unwrap()).collect();
    let dhdq: Vec<u32> = (5..=9).map(|n| storage_cost(StorageKind::Dhdq, n, 3).unwrap()).collect();
    ensure(dhdt == [95, 127, 127, 127, 127], || format!("DHDT {dhdt:?}"))?;
    ensure(dhdq == [20, 25, 30, 35, 40], || format!("DHDQ {dhdq:?}"))?;
    Ok(format!("DHDT {dhdt:?}, DHDQ {dhdq:?}"))
}

fn worked_example() -> Outcome {
    // (rs, rt, wd) of SUB, AND, OR, ADD, SW; $2 is written back before SW reads.
    let rows = [(1, 3, 2), (2, 4, 3), (1, 2, 4), (1, 2, 5), (2, 5, 5)];
    let fraq_after = [[true, false], [true, true], [true, true], [true, true], [true, true]];
    let dhdq_after = [[2, 0, 0, 0], [3, 2, 0, 0], [4, 3, 2, 0], [5, 4, 3, 2], [5, 5, 4, 3]];
    let fw_on_2 = [FwCase::Non, FwCase::EXER, FwCase::MEMR, FwCase::WBR, FwCase::Non];
    let shape = Shape::SAMIPS;
    let (mut q, mut t, mut f) = (Dhdq::new(shape), Dhdt::new(shape), Fraq::new(shape));
    for (row, &(rs, rt, wd)) in rows.iter().enumerate() {
        if row == 4 {
            q.dhdq_write(2).map_err(|e| e.to_string())?;
            t.dhdt_write(2, 0);
        }
        let pair = q.dhdq_read(rs, rt, wd);
        let (tpair, _) = t.dhdt_read(rs, rt, wd);
        f.fraq_step(wd != 0);
        let on_2 = if rs == 2 { pair.fw0 } else { pair.fw1 };
        ensure(on_2 == fw_on_2[row], || format!("row {row}: $2 source {on_2:?}"))?;
        ensure(pair == tpair, || format!("row {row}: DHDQ {pair:?} vs DHDT {tpair:?}"))?;
        ensure(q.entries() == dhdq_after[row], || format!("row {row}: DHDQ {:?}", q.entries()))?;
        ensure(f.bits() == fraq_after[row], || format!("row {row}: FRAQ {:?}", f.bits()))?;
    }
    let trace = vec![RegRead::new(1, 3, 2), RegRead::new(2, 4, 3), RegRead::new(1, 2, 4), RegRead::new(1, 2, 5), RegRead::new(2, 5, 0)];
    let r = run_forwarding_frame(&ForwardingFrame::new(5, trace), 0).map_err(|e| e.to_string())?;
    let frame_on_2 = [r.cases[1].fw0, r.cases[2].fw1, r.cases[3].fw1, r.cases[4].fw0];
    ensure(frame_on_2 == fw_on_2[1..], || format!("frame $2 sources {frame_on_2:?}"))?;
    ensure(r.value_mismatches == 0, || format!("{} forwarded value mismatches", r.value_mismatches))?;
    Ok("5 rows, FRAQ/DHDQ/sources exact; frame agrees".into())
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let images = corpus_images();
    ensure(images.len() >= 20, || format!("corpus has {} programs", images.len()))?;
    let mut runs = 0;
    for cfg in config_matrix() {
        for seed in 0..5 {
            let cfg = ProcessorConfig { seed, ..cfg.clone() };
            for (name, image) in &images {
                let run = run_program(&cfg, image).map_err(|e| format!("{name} {cfg:?}: {e}"))?;
                let diff = divergence(&run, &oracle_for(image, &cfg, &run));
                ensure(diff.is_empty(), || format!("{name} {cfg:?}: {}", diff.join("; ")))?;
                runs += 1;
            }
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(120), || format!("{runs} runs took {took:?}"))?;
    Ok(format!("{} programs, {runs} runs, 0 divergences, {:.1} s", images.len(), took.as_secs_f64()))
}

fn exctest_composition() -> Outcome {
    let image = program("exctest");
    let mut total = 0;
    for cfg in config_matrix() {
        let run = run_program(&cfg, &image).map_err(|e| e.to_string())?;
        let diff = divergence(&run, &oracle_for(&image, &cfg, &run));
        ensure(diff.is_empty(), || diff.join("; "))?;
        let count = |pred: &dyn Fn(ExcCode) -> bool| run.trace.iter().filter(|r| r.exception.is_some_and(pred)).count();
        let counts = [
            count(&|c| c == ExcCode::Ov),
            count(&ExcCode::is_address_error),
            count(&|c| c == ExcCode::RI),
            count(&|c| c == ExcCode::Bp),
            count(&|c| c == ExcCode::Sys),
        ];
        ensure(counts == [4, 4, 4, 4, 32], || format!("{cfg:?}: Ov/Addr/RI/Bp/Sys {counts:?}"))?;
        // The handler logs (Cause, EPC) pairs in data memory.
        let faults: Vec<usize> = (0..run.trace.len()).filter(|&k| run.trace[k].exception.is_some()).collect();
        for (k, &idx) in faults.iter().enumerate() {
            let r = &run.trace[idx];
            let in_slot = cfg.delay_slot == DelaySlot::On && idx > 0 && run.trace[idx - 1].took_branch;
            let base = DATA_BASE + 0x804 + 8 * k as u32;
            let (cause, epc) = (run.memory.image().word(base), run.memory.image().word(base + 4));
            let want_epc = if in_slot { r.addr - 4 } else { r.addr };
            ensure((cause >> 2) & 31 == r.exception.unwrap() as u32, || format!("fault {k}: cause {cause:#x}"))?;
            ensure(epc == want_epc, || format!("fault {k}: EPC {epc:#x}, expected {want_epc:#x}"))?;
        }
        total += faults.len();
    }
    Ok(format!("4 Ov, 4 address, 4 RI, 4 Bp, 32 Sys in 8 configs; {total} ExcCode/EPC pairs checked"))
}

/// Stores and register writes happen exactly for retired instructions, in
/// program order.
fn effects_follow_retirement(image: &MemoryImage, run: &PipelineRun) -> Result<(), String> {
    let mut stores = Vec::new();
    let mut writes = Vec::new();
    for r in run.trace.iter().filter(|r| r.exception.is_none()) {
        let Decoded::Insn(insn) = decode(image.word(r.addr)) else { continue };
        if insn.mnemonic.is_store() {
            stores.push(r.addr);
        }
        if insn.dest() != 0 {
            writes.push((r.addr, insn.dest()));
        }
    }
    let seen_stores: Vec<u32> = run.effects.iter().filter_map(|e| match e { Effect::Store { pc, .. } => Some(*pc), _ => None }).collect();
    let seen_writes: Vec<(u32, u8)> =
        run.effects.iter().filter_map(|e| match e { Effect::RegWrite { pc, rd } => Some((*pc, *rd)), _ => None }).collect();
    ensure(seen_stores == stores, || "store effects differ from retirement".into())?;
    ensure(seen_writes == writes, || "register writes differ from retirement".into())
}

fn multi_colour() -> Outcome {
    let mut programs = 0;
    for k in [3usize, 5] {
        let stages: Vec<usize> = (6 - k..=5).collect();
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9) ^ k as u64);
            let program = random_hazard_program(&mut rng, 40, &stages, 0.12);
            let r = run_colour_frame(&ColourFrame::new(k, program), seed).map_err(|e| e.to_string())?;
            ensure(r.matches_oracle(), || format!("k={k} seed={seed}: {:?} vs {:?}", r.trace, r.oracle))?;
            programs += 1;
        }
    }
    let mut runs = 0;
    for (name, image) in corpus_images() {
        for cfg in config_matrix() {
            let run = run_program(&cfg, &image).map_err(|e| format!("{name}: {e}"))?;
            effects_follow_retirement(&image, &run).map_err(|e| format!("{name} {cfg:?}: {e}"))?;
            runs += 1;
        }
    }
    Ok(format!("{programs} colour programs oracle-equal; no wrong-path effects in {runs} processor runs"))
}

fn detector_equivalence() -> Outcome {
    let shape = Shape::SAMIPS;
    let mut rng = ChaCha8Rng::seed_from_u64(0xD4D7);
    let mut reads = 0;
    for t in 0..100_000 {
        let trace = random_rw_trace(&mut rng, 24, 6, shape);
        let q = replay(&mut Dhdq::new(shape), &trace).map_err(|e| e.to_string())?;
        let d = replay(&mut Dhdt::new(shape), &trace).map_err(|e| e.to_string())?;
        ensure(q == d, || format!("trace {t} differs: {trace:?}"))?;
        reads += q.len();
    }
    Ok(format!("100000 traces, {reads} reads identical"))
}

fn ev(time: u64, channel: u32, phase: Phase) -> ChannelEvent {
    ChannelEvent { time: SimTime::ticks(time), channel: ChannelId(channel), phase, payload: None }
}

fn full_round(ch: u32, r: u64, a: u64, rd: u64, ad: u64) -> [ChannelEvent; 4] {
    [ev(r, ch, Phase::ReqUp), ev(a, ch, Phase::AckUp), ev(rd, ch, Phase::ReqDown), ev(ad, ch, Phase::AckDown)]
}

fn metrics_identities() -> Outcome {
    let mut blocks = 0;
    for (name, image) in corpus_images() {
        let run = run_program(&ProcessorConfig::default(), &image).map_err(|e| format!("{name}: {e}"))?;
        for ports in &run.blocks {
            let l = block_latency(&run.log, &BlockSpec::from(ports), run.end_time).map_err(|e| e.to_string())?;
            ensure(l.t_busy + l.t_wait + l.t_idle == run.end_time, || format!("{name}/{}: {l:?}", ports.name))?;
            blocks += 1;
        }
    }
    // PC: pushes on CInsAdd and PCvalue, pulls NPC.
    let channels = vec![ChannelSpec::push("CInsAdd", 32), ChannelSpec::push("PCvalue", 32), ChannelSpec::pull("NPC", 32)];
    let mut events: Vec<ChannelEvent> =
        [full_round(0, 10, 30, 31, 32), full_round(1, 12, 34, 35, 36), full_round(2, 40, 55, 56, 57)].concat();
    events.sort_by_key(|e| e.time);
    let log = EventLog { channels, events };
    let pc = block_latency(&log, &BlockSpec::new("PC", &["NPC"], &["CInsAdd", "PCvalue"]), SimTime::ticks(60))
        .map_err(|e| e.to_string())?;
    ensure(pc.t_wait == SimTime::ticks(22) && pc.t_idle == SimTime::ticks(15), || format!("PC hand case {pc:?}"))?;
    ensure(busy_from_average(SimTime::ns(3), 4) == SimTime::ns(12), || "busy from average".into())?;
    let f = pipeline_figures(&StageLatencies::Fixed(vec![5.0, 7.0, 9.0])).map_err(|e| e.to_string())?;
    ensure((f.latency_sync, f.latency_async) == (27.0, 21.0), || format!("latencies {f:?}"))?;
    ensure((f.throughput_sync, f.throughput_async) == (1.0 / 9.0, 1.0 / 9.0), || format!("throughputs {f:?}"))?;
    let v = pipeline_figures(&StageLatencies::Variable(vec![vec![5.0], vec![4.0, 8.0], vec![5.0]])).map_err(|e| e.to_string())?;
    ensure((v.throughput_sync, v.throughput_async) == (1.0 / 8.0, 1.0 / 6.0), || format!("variable {v:?}"))?;
    Ok(format!("identity exact on {blocks} block runs; hand cases 27/21/(1/9)"))
}

fn interrupt_scenarios() -> Vec<(&'static str, MemoryImage, Vec<(SimTime, u8)>)> {
    vec![
        ("memory loop, 311 ns", image(INTERRUPTS), pin_train(12, 311, 50)),
        ("memory loop, 997 ns", image(INTERRUPTS), pin_train(12, 997, 50)),
        ("syscalls and branches", image(INTERRUPTS_SYS), pin_train(40, 263, 30)),
    ]
}

fn checked(name: &str, image: &MemoryImage, cfg: &ProcessorConfig) -> Result<PipelineRun, String> {
    let run = run_program(cfg, image).map_err(|e| format!("{name}: {e}"))?;
    let diff = divergence(&run, &oracle_for(image, cfg, &run));
    ensure(diff.is_empty(), || format!("{name}: {}", diff.join("; ")))?;
    effects_follow_retirement(image, &run).map_err(|e| format!("{name}: {e}"))?;
    Ok(run)
}

fn interrupt_schemes() -> Outcome {
    let (mut wb, mut aau) = (0, 0);
    let mut cases = BTreeSet::new();
    for (name, image, pins) in interrupt_scenarios() {
        for cfg in config_matrix() {
            let cfg_wb = ProcessorConfig { interrupts: pins.clone(), ..with_scheme(cfg.clone(), InterruptScheme::Wb) };
            let run = checked(name, &image, &cfg_wb)?;
            ensure(!run.interrupts.is_empty(), || format!("{name}: no interrupt taken under WB"))?;
            for irq in &run.interrupts {
                let before = &run.trace[irq.after_retired - 1];
                let next = run.trace.get(irq.after_retired).map(|r| r.addr);
                ensure(next == Some(0x8000_0080), || format!("{name}: WB interrupt did not vector"))?;
                ensure(before.addr != irq.epc, || format!("{name}: WB victim at {:#x} committed", irq.epc))?;
            }
            wb += run.interrupts.len();

            let cfg_aau = ProcessorConfig { interrupts: pins.clone(), ..with_scheme(cfg, InterruptScheme::Aau) };
            let run = checked(name, &image, &cfg_aau)?;
            let taken: Vec<_> = run.probe.backpoints.iter().filter(|b| b.taken).collect();
            ensure(taken.len() == run.interrupts.len(), || format!("{name}: AAU backpoint count"))?;
            for (b, irq) in taken.iter().zip(&run.interrupts) {
                let want = match b.pending {
                    Some((HazardKind::Exception, at)) => at,
                    Some((_, target)) => target,
                    None => b.last_issued.wrapping_add(4),
                };
                ensure(irq.epc == want, || format!("{name}: AAU EPC {:#x}, backpoint {want:#x}", irq.epc))?;
                cases.insert(b.pending.map(|p| p.0 == HazardKind::Exception));
            }
            aau += run.interrupts.len();
        }
    }
    ensure(cases.len() == 3, || format!("AAU victim cases covered: {cases:?}"))?;
    Ok(format!("3 scenarios per scheme; {wb} WB and {aau} AAU interrupts exact; all 3 backpoint cases"))
}

fn determinism() -> Outcome {
    let mut logs = 0;
    for name in ["quicksort", "exctest", "raw_muldiv"] {
        let image = program(name);
        for cfg in config_matrix() {
            let cfg = ProcessorConfig { seed: 42, ..cfg };
            let a = run_program(&cfg, &image).map_err(|e| e.to_string())?.log.to_csv_bytes();
            let b = run_program(&cfg, &image).map_err(|e| e.to_string())?.log.to_csv_bytes();
            ensure(a == b, || format!("{name} {cfg:?}: logs differ"))?;
            logs += 1;
        }
    }
    let irq = ProcessorConfig { interrupts: pin_train(12, 311, 50), seed: 5, ..with_scheme(ProcessorConfig::default(), InterruptScheme::Aau) };
    let image = image(INTERRUPTS);
    let a = run_program(&irq, &image).map_err(|e| e.to_string())?.log.to_csv_bytes();
    let b = run_program(&irq, &image).map_err(|e| e.to_string())?.log.to_csv_bytes();
    ensure(a == b, || "interrupt run logs differ".into())?;
    let frame = ForwardingFrame::new(7, dense_trace(&mut ChaCha8Rng::seed_from_u64(1), 300, 8, 0.7, 6));
    let fa = run_forwarding_frame(&frame, 3).map_err(|e| e.to_string())?.log.to_csv_bytes();
    let fb = run_forwarding_frame(&frame, 3).map_err(|e| e.to_string())?.log.to_csv_bytes();
    ensure(fa == fb, || "forwarding frame logs differ".into())?;
    Ok(format!("{} byte-identical log pairs", logs + 2))
}

fn depth_trend() -> Outcome {
    let trace = dense_trace(&mut ChaCha8Rng::seed_from_u64(2024), 2000, 8, 0.7, 6);
    let rows = forwarding_sweep(&ForwardingFrame::new(5, trace), 5..=9, 7).map_err(|e| e.to_string())?;
    let pct: Vec<f64> = rows.iter().map(|r| r.operands[0].percent).collect();
    ensure(pct.windows(2).all(|w| w[1] >= w[0]), || format!("operand-0 forwarding {pct:?}"))?;
    let shown: Vec<String> = pct.iter().map(|p| format!("{p:.1}%")).collect();
    Ok(format!("operand-0 forwarding over n=5..9: {}", shown.join(" ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("storage-cost table", storage_table),
        ("worked-example replay", worked_example),
        ("oracle equivalence", oracle_equivalence),
        ("exception test composition", exctest_composition),
        ("multi-colour correctness", multi_colour),
        ("DHDQ/DHDT equivalence", detector_equivalence),
        ("metrics identities", metrics_identities),
        ("interrupt schemes", interrupt_schemes),
        ("determinism", determinism),
        ("forwarding trend over depth", depth_trend),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
