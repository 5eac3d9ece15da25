use std::path::Path;
use std::process::Command;

use rtstream::bench::{run_experiment, ExperimentConfig, ReportRow};

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn generate_is_deterministic_and_fixed_width() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| {
        let path = dir.path().join(name);
        let status = bench()
            .args(["generate", "--batch-size", "50", "--batches", "3", "--seed", "7", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(path).unwrap()
    };
    let (a, b) = (out("a.ndjson"), out("b.ndjson"));
    assert_eq!(a, b);
    let lines: Vec<&[u8]> = a.split(|&c| c == b'\n').filter(|l| !l.is_empty()).collect();
    assert_eq!(lines.len(), 150);
    assert!(lines.iter().all(|l| l.len() == 1296));
}

fn small(out: &Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default_grid(out);
    cfg.batch_sizes = vec![400, 800];
    cfg.batches = 4;
    cfg.seed = seed;
    cfg
}

fn values(rows: &[ReportRow]) -> Vec<(String, u64, String, u64, Option<u64>, u64)> {
    rows.iter()
        .map(|r| {
            let err = r.error_pct.map(f64::to_bits);
            (r.experiment.clone(), r.batch_id, r.method.to_string(), r.value, err, r.checkpoint_bytes)
        })
        .collect()
}

#[test]
fn same_seed_same_report_values() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&small(&dir.path().join("a"), 3)).unwrap();
    let b = run_experiment(&small(&dir.path().join("b"), 3)).unwrap();
    assert_eq!(a.rows.len(), 2 * 4 * 2);
    assert_eq!(values(&a.rows), values(&b.rows));
    for cell in &a.cells {
        assert_eq!(cell.generated, cell.ingested);
        assert!(cell.processed.values().all(|&n| n == cell.generated));
        assert_eq!(cell.exact_final, Some(cell.oracle_final));
        assert_eq!(cell.exact_first_seen_sum, cell.oracle_final);
    }
}

#[test]
fn run_then_compare_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let run = bench()
        .args(["run", "--batch-size", "300", "--batch-size", "600", "--batches", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    let log = String::from_utf8_lossy(&run.stderr);
    assert!(log.contains("PASS") || log.contains("FAIL"), "{log}");
    for f in ["report.csv", "report.json", "cells.json", "summary.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let header = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(header.starts_with(
        "experiment,batch_size,batch_id,method,value,error_pct,processing_ms,scheduling_delay_ms,checkpoint_bytes\n"
    ));

    let csv = bench().args(["compare", "--format", "csv", "--out"]).arg(out.join("report.csv")).output().unwrap();
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("batch_size,mean_exact_ms,mean_hllpp_ms,time_ratio"));

    let json = bench().args(["compare", "--format", "json", "--out"]).arg(&out).output().unwrap();
    assert!(json.status.success());
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn compare_rejects_incomplete_reports() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("report.json");
    std::fs::write(&empty, "[]").unwrap();
    let out = bench().args(["compare", "--out"]).arg(&empty).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("incomplete"));

    let one_method = dir.path().join("exact_only");
    let run = bench()
        .args(["run", "--batch-size", "200", "--batches", "2", "--method", "exact", "--out"])
        .arg(&one_method)
        .output()
        .unwrap();
    assert!(one_method.join("report.json").exists(), "{}", String::from_utf8_lossy(&run.stderr));
    let out = bench().args(["compare", "--out"]).arg(&one_method).output().unwrap();
    assert!(!out.status.success());
}
