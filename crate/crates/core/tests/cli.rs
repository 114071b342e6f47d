mod common;

use std::path::Path;
use std::process::Command;

use samips::arch::{oracle_run, DelaySlot};
use samips::cli::{main_with, EXIT_DIVERGED, EXIT_INPUT, EXIT_OK};
use samips::experiments::corpus;
use samips::isa::{assemble, MemoryImage};

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["samips"];
    full.extend_from_slice(args);
    let code = main_with(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_source(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn corpus_file(dir: &Path, name: &str) -> String {
    write_source(dir, &format!("{name}.s"), corpus::source(name).unwrap())
}

#[test]
fn asm_writes_a_loadable_image() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus_file(dir.path(), "gcd");
    let img = dir.path().join("gcd.img");
    let (code, _, _) = cli(&["asm", &src, "-o", img.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(MemoryImage::load(&img).unwrap(), assemble(corpus::source("gcd").unwrap()).unwrap());
}

#[test]
fn asm_names_undefined_label() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_source(dir.path(), "bad.s", "main: beq $1, $2, nowhere\n nop\n");
    let (code, _, err) = cli(&["asm", &src, "-o", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn missing_input_is_an_input_error() {
    let (code, _, err) = cli(&["run", "/nonexistent/prog.s"]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("/nonexistent/prog.s"));
}

#[test]
fn nop_halt_prints_reset_state() {
    let dir = tempfile::tempdir().unwrap();
    let text = "main: nop\n nop\n break 0x3FF\n";
    let src = write_source(dir.path(), "nop.s", text);
    let (code, out, _) = cli(&["run", &src]);
    assert_eq!(code, EXIT_OK);
    let oracle = oracle_run(&assemble(text).unwrap(), 100, DelaySlot::On, &[]).unwrap();
    assert!(out.starts_with(&oracle.state.dump()), "{out}");
    assert!(oracle.state.regs.iter().all(|&r| r == 0));
}

#[test]
fn same_seed_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus_file(dir.path(), "bubblesort");
    let logs: Vec<Vec<u8>> = ["a.csv", "b.csv"]
        .iter()
        .map(|name| {
            let path = dir.path().join(name);
            let (code, _, _) = cli(&["run", &src, "--seed", "1", "--trace", path.to_str().unwrap()]);
            assert_eq!(code, EXIT_OK);
            std::fs::read(path).unwrap()
        })
        .collect();
    assert!(!logs[0].is_empty());
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn jsonl_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus_file(dir.path(), "gcd");
    let (trace, report) = (dir.path().join("t.jsonl"), dir.path().join("r.json"));
    let (code, _, _) =
        cli(&["run", &src, "--trace", trace.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let first = std::fs::read_to_string(&trace).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(line.get("channel").is_some());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert!(v["blocks"].as_array().unwrap().len() > 10);
    assert!(v["mix"]["total"].as_u64().unwrap() > 0);
}

#[test]
fn optimized_matches_original_state() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["matmul", "exctest", "raw_muldiv"] {
        let src = corpus_file(dir.path(), name);
        let (a, out_a, _) = cli(&["run", &src, "--exe-mode", "original"]);
        let (b, out_b, _) = cli(&["run", &src, "--exe-mode", "optimized"]);
        assert_eq!((a, b), (EXIT_OK, EXIT_OK));
        let state = |s: &str| s.lines().filter(|l| !l.starts_with("retired")).collect::<Vec<_>>().join("\n");
        assert_eq!(state(&out_a), state(&out_b), "{name}");
    }
}

#[test]
fn compare_passes_on_corpus() {
    let dir = tempfile::tempdir().unwrap();
    for (name, _) in corpus::PROGRAMS {
        let src = corpus_file(dir.path(), name);
        let (code, out, err) = cli(&["compare", &src, "--hazard-impl", "dhdt", "--delay-slot", "off"]);
        assert_eq!(code, EXIT_OK, "{name}: {err}");
        assert!(out.starts_with("match"));
    }
}

#[test]
fn compare_with_interrupts() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_source(dir.path(), "irq.s", common::INTERRUPTS);
    for scheme in ["wb", "aau"] {
        let (code, out, err) =
            cli(&["compare", &src, "--interrupt-scheme", scheme, "--irq", "400:1", "--irq", "1500:3", "--irq", "2600:5"]);
        assert_eq!(code, EXIT_OK, "{scheme}: {err}");
        assert!(out.contains("3 interrupts"), "{scheme}: {out}");
    }
}

#[test]
fn corrupted_forwarding_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus_file(dir.path(), "raw_chain");
    let (code, _, err) = cli(&["compare", &src, "--debug-corrupt-fwcase"]);
    assert_eq!(code, EXIT_DIVERGED);
    assert!(err.starts_with("error:"), "{err}");
}

#[test]
fn event_limit_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus_file(dir.path(), "sieve");
    let (code, _, err) = cli(&["run", &src, "--max-events", "1000"]);
    assert_eq!(code, EXIT_DIVERGED, "{err}");
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(cli(&["run", "x.s", "--hazard-impl", "table"]).0, EXIT_INPUT);
    assert_eq!(cli(&["run", "x.s", "--irq", "12"]).0, EXIT_INPUT);
    assert_eq!(cli(&["run", "x.s", "--irq", "12:9"]).0, EXIT_INPUT);
    assert_eq!(cli(&["frobnicate"]).0, EXIT_INPUT);
    let (code, out, _) = cli(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("experiment"));
    let (_, help, _) = cli(&["run", "--help"]);
    assert!(!help.contains("corrupt"));
}

#[test]
fn forwarding_sweep_csv() {
    let (code, out, _) = cli(&["experiment", "fwd", "--len", "200", "--seed", "3"]);
    assert_eq!(code, EXIT_OK);
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "storage_cost").unwrap();
    let costs: Vec<u32> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(costs, vec![20, 25, 30, 35, 40]);
}

#[test]
fn forwarding_sweep_from_corpus_program() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fwd.csv");
    let (code, _, err) =
        cli(&["experiment", "fwd", "--program", "bubblesort", "--n", "5..6", "--out", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 3);
    assert_eq!(cli(&["experiment", "fwd", "--program", "nope"]).0, EXIT_INPUT);
}

#[test]
fn colour_sweeps() {
    let (code, out, _) = cli(&["experiment", "colour", "--nop", "--len", "20"]);
    assert_eq!(code, EXIT_OK);
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    for row in &rows {
        for (h, v) in headers.iter().zip(row.iter()) {
            if h.starts_with("discarded") {
                assert_eq!(v, "0");
            }
        }
    }
    let (code, out, _) = cli(&["experiment", "colour", "--len", "40", "--seed", "9"]);
    assert_eq!(code, EXIT_OK);
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "oracle_match").unwrap();
    assert!(rdr.records().all(|r| &r.unwrap()[col] == "true"));
}

#[test]
fn binary_reads_seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let src = corpus_file(dir.path(), "quicksort");
    let run = |envseed: Option<&str>, flag: Option<&str>, log: &str| {
        let path = dir.path().join(log);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_samips"));
        cmd.args(["run", &src, "--trace", path.to_str().unwrap()]);
        cmd.env_remove("SAMIPS_SEED");
        if let Some(s) = envseed {
            cmd.env("SAMIPS_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        let status = cmd.output().unwrap().status;
        assert_eq!(status.code(), Some(EXIT_OK));
        std::fs::read(path).unwrap()
    };
    assert_eq!(run(Some("7"), None, "env.csv"), run(None, Some("7"), "flag.csv"));
    let out = Command::new(env!("CARGO_BIN_EXE_samips")).args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
}
