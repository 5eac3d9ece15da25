//! Acceptance runner: one PASS/FAIL line per top-level criterion, nonzero
//! exit if any fails.

mod suites;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rtstream::bench::{generate_logs, load_report, GenerateConfig, ReportRow, DEFAULT_SEED};
use rtstream::daily::Method;
use suites::{e2e, engine, queue, sketch, workflow};

const SIZES: [usize; 3] = [3000, 5000, 10000];
const BATCHES: u64 = 12;

struct Grid {
    exit_ok: bool,
    stderr: String,
    wall_s: f64,
    rows: Vec<ReportRow>,
}

fn run_grid(out: &std::path::Path) -> Grid {
    let t = Instant::now();
    let run = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(["run", "--seed", &DEFAULT_SEED.to_string(), "--precision", "14", "--batches", &BATCHES.to_string(), "--out"])
        .arg(out)
        .output()
        .expect("bench binary runs");
    let wall_s = t.elapsed().as_secs_f64();
    Grid {
        exit_ok: run.status.success(),
        stderr: String::from_utf8_lossy(&run.stderr).into_owned(),
        wall_s,
        rows: load_report(&out.join("report.json")).unwrap_or_default(),
    }
}

fn series(rows: &[ReportRow], size: usize, method: Method) -> Vec<&ReportRow> {
    let mut v: Vec<&ReportRow> = rows.iter().filter(|r| r.batch_size == size && r.method == method).collect();
    v.sort_by_key(|r| r.batch_id);
    v
}

/// Cumulative distinct IPs after each generated batch, from the raw NDJSON.
fn oracle(size: usize) -> Vec<u64> {
    let cfg = GenerateConfig::new(size as u64 * BATCHES, DEFAULT_SEED).batch_size(size as u64);
    let lines = generate_logs(&cfg).unwrap();
    let mut seen = HashSet::new();
    lines
        .chunks(size)
        .map(|chunk| {
            for l in chunk {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                seen.insert(v["geo"]["ip"].as_str().unwrap().to_owned());
            }
            seen.len() as u64
        })
        .collect()
}

fn error_bound(g: &Grid) -> String {
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    for size in SIZES {
        let truth = oracle(size);
        let exact = series(&g.rows, size, Method::Exact);
        let hll = series(&g.rows, size, Method::Hllpp);
        assert_eq!(exact.len(), BATCHES as usize, "b{size}: exact rows");
        assert_eq!(hll.len(), BATCHES as usize, "b{size}: hllpp rows");
        for (b, t) in truth.iter().enumerate() {
            assert_eq!(exact[b].value, *t, "b{size} batch {}: exact value vs brute force", b + 1);
            let err = (hll[b].value as f64 - *t as f64).abs() / *t as f64 * 100.0;
            assert!(err < 1.5, "b{size} batch {}: error {err:.3}%", b + 1);
            if err > worst.0 {
                worst = (err, format!("b{size} batch {}", b + 1));
            }
            count += 1;
        }
    }
    assert!(g.wall_s < 60.0, "grid took {:.1} s", g.wall_s);
    format!("{count} hllpp batches, worst {:.3}% at {}, grid {:.1} s", worst.0, worst.1, g.wall_s)
}

fn space(g: &Grid) -> String {
    for size in SIZES {
        let exact: Vec<u64> = series(&g.rows, size, Method::Exact).iter().map(|r| r.checkpoint_bytes).collect();
        assert!(exact.windows(2).all(|w| w[1] > w[0]), "b{size}: exact not strictly increasing {exact:?}");
        let hll: Vec<u64> = series(&g.rows, size, Method::Hllpp).iter().map(|r| r.checkpoint_bytes).collect();
        let tail = &hll[1..];
        let (lo, hi) = (*tail.iter().min().unwrap(), *tail.iter().max().unwrap());
        assert!(((hi - lo) as f64) < 0.10 * lo as f64, "b{size}: hllpp spread {lo}..{hi}");
    }
    let e = series(&g.rows, 10000, Method::Exact)[BATCHES as usize - 1].checkpoint_bytes;
    let h = series(&g.rows, 10000, Method::Hllpp)[BATCHES as usize - 1].checkpoint_bytes;
    let share = h as f64 / e as f64;
    assert!(share < 0.05, "b10000 batch 12: hllpp {h} vs exact {e}");
    format!("b10000 batch 12: hllpp {h} B = {:.2}% of exact {e} B; hllpp spread < 10% from batch 2 in all cells", share * 100.0)
}

fn time(g: &Grid) -> String {
    let mean = |rs: Vec<&ReportRow>| rs.iter().map(|r| r.processing_ms).sum::<f64>() / rs.len() as f64;
    let mut ratios = Vec::new();
    for size in SIZES {
        let (e, h) = (mean(series(&g.rows, size, Method::Exact)), mean(series(&g.rows, size, Method::Hllpp)));
        assert!(e > h, "b{size}: exact {e:.3} ms <= hllpp {h:.3} ms");
        ratios.push(e / h);
    }
    assert!(ratios.windows(2).all(|w| w[1] >= w[0]), "ratio not non-decreasing: {ratios:.2?}");
    format!("exact/hllpp ratios {ratios:.2?} for {SIZES:?}")
}

fn end_to_end(g: &Grid) -> String {
    let failed: Vec<&str> = g.stderr.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert!(g.exit_ok && failed.is_empty(), "bench run failed: {failed:?}");
    let passed = g.stderr.lines().filter(|l| l.starts_with("PASS")).count();
    let serve = e2e::serve_fixture();
    format!("bench run exit 0 with {passed} checks green; serve: {serve}")
}

fn check(name: &str, results: &mut BTreeMap<String, bool>, f: impl FnOnce() -> String) {
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let line = match &outcome {
        Ok(detail) => format!("PASS {name}: {detail}"),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            format!("FAIL {name}: {}", msg.replace('\n', " "))
        }
    };
    println!("{line}");
    results.insert(name.to_owned(), outcome.is_ok());
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let dir = tempfile::tempdir().unwrap();
    let grid = run_grid(dir.path());
    let mut results = BTreeMap::new();

    check("error bound", &mut results, || error_bound(&grid));
    check("space", &mut results, || space(&grid));
    check("time", &mut results, || time(&grid));
    check("sketch suite", &mut results, || {
        [
            sketch::merge_algebra(1000),
            sketch::monotonicity(100),
            sketch::order_independence(200),
            sketch::accuracy_envelope(100),
        ]
        .join("; ")
    });
    check("queue suite", &mut results, || {
        [queue::fifo(100_000, 42), queue::at_least_once(), queue::segment_round_trip(9)].join("; ")
    });
    check("engine suite", &mut results, || {
        [
            engine::kill_and_restore(),
            engine::offsets_hold_on_failed_checkpoint(),
            engine::slowed_operator_delay(40, 5).1,
        ]
        .join("; ")
    });
    check("workflow suite", &mut results, || {
        [
            workflow::compile_rejections(),
            workflow::escalation_property(10_000),
            workflow::resume_verbatim(256),
            workflow::replay_reproduces_history(),
            workflow::cycle_budget(),
        ]
        .join("; ")
    });
    check("end-to-end", &mut results, || end_to_end(&grid));

    let failed = results.values().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
