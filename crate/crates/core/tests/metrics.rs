mod common;

use proptest::prelude::*;
use samips::arch::RetireRecord;
use samips::isa::{decode, Group, Mnemonic};
use samips::kernel::{ChannelEvent, ChannelId, ChannelSpec, EventLog, Phase, SimTime};
use samips::metrics::*;
use samips::pipeline::{run_program, PipelineRun, ProcessorConfig};

fn ev(time: u64, channel: u32, phase: Phase) -> ChannelEvent {
    ChannelEvent { time: SimTime::ticks(time), channel: ChannelId(channel), phase, payload: None }
}

fn log_of(channels: Vec<ChannelSpec>, mut events: Vec<ChannelEvent>) -> EventLog {
    events.sort_by_key(|e| e.time);
    EventLog { channels, events }
}

fn full_round(ch: u32, r: u64, a: u64, rd: u64, ad: u64) -> Vec<ChannelEvent> {
    vec![ev(r, ch, Phase::ReqUp), ev(a, ch, Phase::AckUp), ev(rd, ch, Phase::ReqDown), ev(ad, ch, Phase::AckDown)]
}

/// PC with two push outputs and a pull input from NPC; one earlier round
/// whose acks fall at 8 and 9.
fn pc_log() -> (EventLog, BlockSpec) {
    let channels = vec![ChannelSpec::push("CInsAdd", 32), ChannelSpec::push("PCvalue", 32), ChannelSpec::pull("NPC", 32)];
    let mut events = Vec::new();
    events.extend(full_round(0, 1, 4, 6, 8));
    events.extend(full_round(1, 2, 5, 7, 9));
    events.extend(full_round(0, 10, 30, 31, 32));
    events.extend(full_round(1, 12, 34, 35, 36));
    events.extend(full_round(2, 40, 55, 56, 57));
    (log_of(channels, events), BlockSpec::new("PC", &["NPC"], &["CInsAdd", "PCvalue"]))
}

#[test]
fn hand_built_pc_round() {
    let (log, block) = pc_log();
    let l = block_latency(&log, &block, SimTime::ticks(100)).unwrap();
    // First round waits from 2 to 5; the second from 12 to 34.
    assert_eq!(l.t_wait, SimTime::ticks(3 + 22));
    assert_eq!(l.t_idle, SimTime::ticks(15));
    assert_eq!(l.t_busy + l.t_wait + l.t_idle, SimTime::ticks(100));
    assert!(l.partial.is_empty());
}

#[test]
fn second_round_alone_waits_22() {
    let channels = vec![ChannelSpec::push("CInsAdd", 32), ChannelSpec::push("PCvalue", 32), ChannelSpec::pull("NPC", 32)];
    let mut events = full_round(0, 10, 30, 31, 32);
    events.extend(full_round(1, 12, 34, 35, 36));
    events.extend(full_round(2, 40, 55, 56, 57));
    let log = log_of(channels, events);
    let block = BlockSpec::new("PC", &["NPC"], &["CInsAdd", "PCvalue"]);
    let l = block_latency(&log, &block, SimTime::ticks(60)).unwrap();
    assert_eq!(l.t_wait, SimTime::ticks(22));
    assert_eq!(l.t_idle, SimTime::ticks(15));
    assert_eq!(l.t_busy, SimTime::ticks(60 - 22 - 15));
}

#[test]
fn push_inputs_are_not_idle() {
    let channels = vec![ChannelSpec::push("In", 8), ChannelSpec::push("Out", 8)];
    let mut events = full_round(0, 5, 15, 16, 17);
    events.extend(full_round(1, 20, 25, 26, 27));
    let log = log_of(channels, events);
    let l = block_latency(&log, &BlockSpec::new("B", &["In"], &["Out"]), SimTime::ticks(50)).unwrap();
    assert_eq!(l.t_idle, SimTime::ZERO);
    assert_eq!(l.t_wait, SimTime::ticks(5));
}

#[test]
fn overlapping_pull_inputs_are_unioned() {
    let channels = vec![ChannelSpec::pull("A", 8), ChannelSpec::pull("B", 8)];
    let mut events = full_round(0, 10, 30, 31, 32);
    events.extend(full_round(1, 20, 40, 41, 42));
    let log = log_of(channels, events);
    let l = block_latency(&log, &BlockSpec::new("J", &["A", "B"], &[]), SimTime::ticks(100)).unwrap();
    assert_eq!(l.t_idle, SimTime::ticks(30));
}

#[test]
fn zero_transfers_is_all_busy() {
    let log = log_of(vec![ChannelSpec::push("X", 1), ChannelSpec::pull("Y", 1)], vec![]);
    let l = block_latency(&log, &BlockSpec::new("B", &["Y"], &["X"]), SimTime::ticks(70)).unwrap();
    assert_eq!((l.t_busy, l.t_wait, l.t_idle), (SimTime::ticks(70), SimTime::ZERO, SimTime::ZERO));
}

#[test]
fn truncated_round_is_reported() {
    let channels = vec![ChannelSpec::push("Out", 8)];
    let mut events = full_round(0, 5, 15, 16, 17);
    events.push(ev(30, 0, Phase::ReqUp));
    let log = log_of(channels, events);
    let l = block_latency(&log, &BlockSpec::new("B", &[], &["Out"]), SimTime::ticks(40)).unwrap();
    assert_eq!(l.partial, vec!["Out".to_string()]);
    assert_eq!(l.t_wait, SimTime::ticks(10));
    assert_eq!(l.t_busy + l.t_wait + l.t_idle, SimTime::ticks(40));
}

#[test]
fn unknown_channel_is_an_error() {
    let log = log_of(vec![ChannelSpec::push("X", 1)], vec![]);
    let err = block_latency(&log, &BlockSpec::new("B", &["Nope"], &[]), SimTime::ticks(1)).unwrap_err();
    assert!(matches!(err, MetricsError::UnknownChannel { .. }));
}

fn default_runs() -> Vec<(&'static str, PipelineRun)> {
    common::corpus_images()
        .into_iter()
        .map(|(n, img)| (n, run_program(&ProcessorConfig::default(), &img).unwrap()))
        .collect()
}

#[test]
fn identity_holds_for_every_block_of_every_corpus_run() {
    for (name, run) in default_runs() {
        for b in &run.blocks {
            let l = block_latency(&run.log, &BlockSpec::from(b), run.end_time).unwrap();
            assert_eq!(l.t_busy + l.t_wait + l.t_idle, run.end_time, "{name} {}", b.name);
        }
    }
}

#[test]
fn busy_from_average_products() {
    assert_eq!(busy_from_average(SimTime::ns(12), 100), SimTime::ns(1200));
    assert_eq!(busy_from_average(SimTime::ZERO, 37), SimTime::ZERO);
}

/// Per-request latency of a block: from an input acknowledge to the next
/// output request.
fn request_latencies(run: &PipelineRun, spec: &BlockSpec, input: &str) -> Vec<u64> {
    let rounds = run.log.rounds_by_channel();
    let id = |n: &str| run.log.channel_id(n).unwrap().0 as usize;
    let mut outs: Vec<u64> =
        spec.outputs.iter().flat_map(|o| rounds[id(o)].iter().map(|r| r.req_up.as_ticks())).collect();
    outs.sort_unstable();
    rounds[id(input)]
        .iter()
        .filter_map(|r| r.ack_up)
        .filter_map(|a| {
            let a = a.as_ticks();
            let k = outs.partition_point(|&o| o < a);
            outs.get(k).map(|o| o - a)
        })
        .collect()
}

#[test]
fn average_latency_estimate_tracks_measured_busy_for_exeunit() {
    let (mut estimated, mut measured) = (0u64, 0u64);
    for (name, run) in default_runs() {
        let spec = BlockSpec::from(run.blocks.iter().find(|b| b.name == "EXEunit").unwrap());
        let lat = request_latencies(&run, &spec, "EXCtrl");
        assert!(!lat.is_empty(), "{name}");
        let avg = (lat.iter().sum::<u64>() as f64 / lat.len() as f64).round() as u64;
        estimated += busy_from_average(SimTime::ticks(avg), lat.len() as u64).as_ticks();
        measured += block_latency(&run.log, &spec, run.end_time).unwrap().t_busy.as_ticks();
    }
    let err = (estimated as f64 - measured as f64).abs() / measured as f64;
    assert!(err < 0.15, "relative error {err:.3}");
}

#[test]
fn channel_hand_trace() {
    let log = log_of(vec![ChannelSpec::push("C", 8), ChannelSpec::push("Unused", 8)], full_round(0, 10, 20, 22, 25));
    let stats = channel_utilisation(&log, SimTime::ticks(100));
    let c = &stats[0];
    assert_eq!((c.requests, c.wait, c.idle), (1, SimTime::ticks(10), SimTime::ticks(85)));
    assert!((c.wait_pct - 10.0).abs() < 1e-9);
    assert!((c.idle_pct - 85.0).abs() < 1e-9);
    let u = &stats[1];
    assert_eq!((u.requests, u.wait), (0, SimTime::ZERO));
    assert!((u.idle_pct - 100.0).abs() < 1e-9);
}

#[test]
fn channel_requests_match_kernel_transfer_counts() {
    for (name, run) in default_runs() {
        let stats = channel_utilisation(&run.log, run.end_time);
        assert_eq!(stats.len(), run.transfers.len());
        for (s, (ch, n)) in stats.iter().zip(&run.transfers) {
            assert_eq!(&s.channel, ch);
            // A round still open at halt is requested but not yet counted.
            assert!(s.requests == *n || s.requests == n + 1, "{name} {ch}: {} vs {n}", s.requests);
        }
    }
}

#[test]
fn channel_table_covers_every_processor_channel() {
    let img = common::program("bubblesort");
    let run = run_program(&ProcessorConfig::default(), &img).unwrap();
    let stats = channel_utilisation(&run.log, run.end_time);
    let names: Vec<&str> = stats.iter().map(|s| s.channel.as_str()).collect();
    for ch in ["CInsAdd", "PCvalue", "NPC", "EXCtrl", "MEMCtrl", "RegWrite", "FRACtrl"] {
        assert!(names.contains(&ch), "{ch}");
    }
    let mut buf = Vec::new();
    write_channel_csv(&stats, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("channel,requests,wait_ns,wait_pct,idle_ns,idle_pct\n"));
    assert_eq!(text.lines().count(), stats.len() + 1);
}

fn record(m: Mnemonic) -> RetireRecord {
    RetireRecord { addr: 0, mnemonic: Some(m), took_branch: false, exception: None }
}

#[test]
fn four_nops() {
    let trace = vec![record(Mnemonic::Nop); 4];
    let mix = instruction_mix(&trace);
    assert_eq!(mix.total, 4);
    assert_eq!(mix.count(Group::Nop), 4);
    let nop = mix.rows.iter().find(|r| r.group == Group::Nop).unwrap();
    assert!((nop.percent - 100.0).abs() < 1e-9);
}

#[test]
fn reserved_encodings_count_as_special() {
    let trace = vec![RetireRecord { addr: 0, mnemonic: None, took_branch: false, exception: None }];
    assert_eq!(instruction_mix(&trace).count(Group::Special), 1);
}

#[test]
fn exctest_mix_has_special_and_cp0() {
    let img = common::program("exctest");
    let run = run_program(&ProcessorConfig::default(), &img).unwrap();
    let mix = instruction_mix(&run.trace);
    assert!(mix.count(Group::Special) > 0);
    assert!(mix.count(Group::Cp0) > 0);
}

#[test]
fn mix_partitions_every_corpus_trace() {
    for (name, run) in default_runs() {
        let mix = instruction_mix(&run.trace);
        assert_eq!(mix.rows.len(), Group::ALL.len());
        assert_eq!(mix.rows.iter().map(|r| r.count).sum::<u64>(), run.trace.len() as u64, "{name}");
        let pct: f64 = mix.rows.iter().map(|r| r.percent).sum();
        assert!((pct - 100.0).abs() < 1e-6, "{name}: {pct}");
        let mut buf = Vec::new();
        write_mix_csv(&mix, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), Group::ALL.len() + 2);
    }
}

#[test]
fn decoded_mnemonics_agree_with_trace_groups() {
    let img = common::program("bubblesort");
    let run = run_program(&ProcessorConfig::default(), &img).unwrap();
    for r in &run.trace {
        assert_eq!(decode(img.word(r.addr)).instruction().map(|i| i.mnemonic), r.mnemonic);
    }
}

#[test]
fn fixed_stage_figures() {
    let f = pipeline_figures(&StageLatencies::Fixed(vec![5.0, 7.0, 9.0])).unwrap();
    assert_eq!((f.latency_sync, f.latency_async), (27.0, 21.0));
    assert_eq!((f.throughput_sync, f.throughput_async), (1.0 / 9.0, 1.0 / 9.0));
}

#[test]
fn variable_stage_figures() {
    let stages = StageLatencies::Variable(vec![vec![5.0], vec![4.0, 8.0], vec![5.0]]);
    let f = pipeline_figures(&stages).unwrap();
    assert_eq!(f.throughput_sync, 1.0 / 8.0);
    assert_eq!(f.throughput_async, 1.0 / 6.0);
}

#[test]
fn equal_stages_give_equal_latency() {
    let f = pipeline_figures(&StageLatencies::Fixed(vec![4.0; 6])).unwrap();
    assert_eq!(f.latency_sync, f.latency_async);
}

#[test]
fn empty_samples_are_rejected() {
    let stages = StageLatencies::Variable(vec![vec![1.0], vec![]]);
    assert_eq!(pipeline_figures(&stages), Err(MetricsError::EmptySample(1)));
    assert_eq!(pipeline_figures(&StageLatencies::Fixed(vec![])), Err(MetricsError::NoStages));
}

#[test]
fn report_serialises() {
    let img = common::program("gcd");
    let run = run_program(&ProcessorConfig::default(), &img).unwrap();
    let blocks: Vec<BlockSpec> = run.blocks.iter().map(BlockSpec::from).collect();
    let report = RunReport::build(&run.log, &blocks, &run.trace, run.end_time).unwrap();
    let mut buf = Vec::new();
    report.write_json(&mut buf).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(v["channels"].as_array().unwrap().len(), run.log.channels.len());
    let mut plot = Vec::new();
    write_latency_plot_csv(&report.blocks, &mut plot).unwrap();
    assert_eq!(String::from_utf8(plot).unwrap().lines().count(), blocks.len() + 1);
}

proptest! {
    #[test]
    fn async_never_worse_than_sync(sets in prop::collection::vec(prop::collection::vec(1.0f64..100.0, 1..6), 1..10)) {
        let f = pipeline_figures(&StageLatencies::Variable(sets.clone())).unwrap();
        prop_assert!(f.latency_async <= f.latency_sync + 1e-9);
        prop_assert!(f.throughput_async >= f.throughput_sync);
        let fixed: Vec<f64> = sets.iter().map(|s| s[0]).collect();
        let g = pipeline_figures(&StageLatencies::Fixed(fixed)).unwrap();
        prop_assert!(g.latency_async <= g.latency_sync + 1e-9);
    }

    #[test]
    fn identity_on_random_logs(
        rounds in prop::collection::vec((0u8..3, 1u64..20, 1u64..20, 1u64..5, 1u64..5), 0..30),
        tail in 0u64..50,
    ) {
        let channels = vec![ChannelSpec::push("O1", 8), ChannelSpec::push("O2", 8), ChannelSpec::pull("I", 8)];
        let mut free = [0u64; 3];
        let mut events = Vec::new();
        for (ch, gap, ack, rd, ad) in rounds {
            let c = ch as usize;
            let r = free[c] + gap;
            events.extend(full_round(ch as u32, r, r + ack, r + ack + rd, r + ack + rd + ad));
            free[c] = r + ack + rd + ad;
        }
        let log = log_of(channels, events);
        let total = SimTime::ticks(log.end_time().as_ticks() + tail);
        let l = block_latency(&log, &BlockSpec::new("B", &["I"], &["O1", "O2"]), total).unwrap();
        prop_assert_eq!(l.t_busy + l.t_wait + l.t_idle, total);
    }
}
