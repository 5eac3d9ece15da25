use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::{BenchError, Report, ReportRow};
use crate::daily::Method;

/// HLL++ error bound per batch, percent.
pub const ERROR_BOUND_PCT: f64 = 1.5;
/// Allowed spread of HLL++ checkpoint sizes from batch 2 on.
pub const CHECKPOINT_SPREAD: f64 = 0.10;
/// HLL++ checkpoint must be below this share of the exact one by the last batch.
pub const CHECKPOINT_SHARE: f64 = 0.05;
pub const RUNTIME_TARGET_S: f64 = 60.0;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("incomplete report: {0}")]
pub struct IncompleteReport(pub String);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub batch_size: usize,
    pub mean_exact_ms: f64,
    pub mean_hllpp_ms: f64,
    /// `mean_exact_ms / mean_hllpp_ms`.
    pub time_ratio: f64,
    pub exact_checkpoint_bytes: Vec<u64>,
    pub hllpp_checkpoint_bytes: Vec<u64>,
    pub max_error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
}

fn series<'a>(rows: &[&'a ReportRow], method: Method) -> Vec<&'a ReportRow> {
    let mut v: Vec<&ReportRow> = rows.iter().copied().filter(|r| r.method == method).collect();
    v.sort_by_key(|r| r.batch_id);
    v
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Per batch size: mean processing time of each method, their ratio and the
/// checkpoint size curves. Both methods must be present for every size.
pub fn report_compare(rows: &[ReportRow]) -> Result<Comparison, IncompleteReport> {
    if rows.is_empty() {
        return Err(IncompleteReport("report has no rows".into()));
    }
    let mut by_size: BTreeMap<usize, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        by_size.entry(r.batch_size).or_default().push(r);
    }
    let mut out = Vec::new();
    for (size, rs) in by_size {
        let exact = series(&rs, Method::Exact);
        let hll = series(&rs, Method::Hllpp);
        if exact.is_empty() || hll.is_empty() {
            return Err(IncompleteReport(format!("batch size {size} lacks one of the methods")));
        }
        let mean_exact_ms = mean(exact.iter().map(|r| r.processing_ms));
        let mean_hllpp_ms = mean(hll.iter().map(|r| r.processing_ms));
        out.push(CompareRow {
            batch_size: size,
            mean_exact_ms,
            mean_hllpp_ms,
            time_ratio: mean_exact_ms / mean_hllpp_ms,
            exact_checkpoint_bytes: exact.iter().map(|r| r.checkpoint_bytes).collect(),
            hllpp_checkpoint_bytes: hll.iter().map(|r| r.checkpoint_bytes).collect(),
            max_error_pct: hll.iter().filter_map(|r| r.error_pct).fold(0.0, f64::max),
        });
    }
    Ok(Comparison { rows: out })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// The assertions a full run must satisfy. Checks that need both methods
/// are skipped when the report has only one.
pub fn check_report(report: &Report) -> Vec<Check> {
    let mut checks = Vec::new();
    for cell in &report.cells {
        let name = &cell.experiment;
        checks.push(Check::new(
            format!("{name}: cell completed"),
            cell.error.is_none(),
            cell.error.clone().unwrap_or_else(|| "ok".into()),
        ));
        let processed_ok = cell.processed.values().all(|&p| p == cell.generated);
        checks.push(Check::new(
            format!("{name}: generated == ingested == processed"),
            cell.generated == cell.ingested && processed_ok && !cell.processed.is_empty(),
            format!("generated {} ingested {} processed {:?}", cell.generated, cell.ingested, cell.processed),
        ));
        if let Some(exact) = cell.exact_final {
            checks.push(Check::new(
                format!("{name}: exact count equals brute-force oracle"),
                exact == cell.oracle_final && cell.exact_first_seen_sum == exact,
                format!("exact {exact} oracle {} sum(first_seen) {}", cell.oracle_final, cell.exact_first_seen_sum),
            ));
        }
    }

    let hll: Vec<&ReportRow> = report.rows.iter().filter(|r| r.method == Method::Hllpp).collect();
    if !hll.is_empty() {
        let worst = hll
            .iter()
            .max_by(|a, b| a.error_pct.unwrap_or(f64::INFINITY).total_cmp(&b.error_pct.unwrap_or(f64::INFINITY)))
            .unwrap();
        let ok = hll.iter().all(|r| r.error_pct.is_some_and(|e| e < ERROR_BOUND_PCT));
        checks.push(Check::new(
            format!("every hllpp batch error < {ERROR_BOUND_PCT}%"),
            ok,
            format!(
                "{} batches, worst {:.4}% ({} batch {})",
                hll.len(),
                worst.error_pct.unwrap_or(f64::NAN),
                worst.experiment,
                worst.batch_id
            ),
        ));
    }

    let mut by_size: BTreeMap<usize, Vec<&ReportRow>> = BTreeMap::new();
    for r in &report.rows {
        by_size.entry(r.batch_size).or_default().push(r);
    }
    for (size, rs) in &by_size {
        let exact = series(rs, Method::Exact);
        if !exact.is_empty() {
            let sizes: Vec<u64> = exact.iter().map(|r| r.checkpoint_bytes).collect();
            checks.push(Check::new(
                format!("b{size}: exact checkpoint grows every batch"),
                sizes.windows(2).all(|w| w[1] > w[0]),
                format!("{sizes:?}"),
            ));
        }
        let hll = series(rs, Method::Hllpp);
        if hll.len() >= 2 {
            let tail: Vec<u64> = hll[1..].iter().map(|r| r.checkpoint_bytes).collect();
            let (lo, hi) = (*tail.iter().min().unwrap(), *tail.iter().max().unwrap());
            let spread = (hi - lo) as f64 / lo as f64;
            checks.push(Check::new(
                format!("b{size}: hllpp checkpoint varies < {:.0}% from batch 2", CHECKPOINT_SPREAD * 100.0),
                spread < CHECKPOINT_SPREAD,
                format!("min {lo} max {hi} spread {:.2}%", spread * 100.0),
            ));
        }
    }

    let share_size = if by_size.contains_key(&10000) { by_size.keys().find(|&&k| k == 10000) } else { by_size.keys().last() };
    if let Some(size) = share_size {
        let rs = &by_size[size];
        let (exact, hll) = (series(rs, Method::Exact), series(rs, Method::Hllpp));
        if let (Some(e), Some(h)) = (exact.last(), hll.last()) {
            let share = h.checkpoint_bytes as f64 / e.checkpoint_bytes as f64;
            checks.push(Check::new(
                format!("b{size}: final hllpp checkpoint < {:.0}% of exact", CHECKPOINT_SHARE * 100.0),
                share < CHECKPOINT_SHARE,
                format!("{} vs {} bytes ({:.2}%)", h.checkpoint_bytes, e.checkpoint_bytes, share * 100.0),
            ));
        }
    }

    if let Ok(cmp) = report_compare(&report.rows) {
        for row in &cmp.rows {
            checks.push(Check::new(
                format!("b{}: mean exact time > mean hllpp time", row.batch_size),
                row.time_ratio > 1.0,
                format!("{:.3} ms vs {:.3} ms (ratio {:.2})", row.mean_exact_ms, row.mean_hllpp_ms, row.time_ratio),
            ));
        }
        let ratios: Vec<f64> = cmp.rows.iter().map(|r| r.time_ratio).collect();
        if ratios.len() >= 2 {
            checks.push(Check::new(
                "time ratio non-decreasing in batch size",
                ratios.windows(2).all(|w| w[1] >= w[0]),
                format!("{:?}", ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()),
            ));
        }
    }

    checks.push(Check::new(
        format!("runtime < {RUNTIME_TARGET_S:.0} s"),
        report.elapsed_s < RUNTIME_TARGET_S,
        format!("{:.2} s", report.elapsed_s),
    ));
    checks
}

const CSV_HEADER: [&str; 9] = [
    "experiment",
    "batch_size",
    "batch_id",
    "method",
    "value",
    "error_pct",
    "processing_ms",
    "scheduling_delay_ms",
    "checkpoint_bytes",
];

pub fn write_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.batch_size.to_string(),
            r.batch_id.to_string(),
            r.method.to_string(),
            r.value.to_string(),
            r.error_pct.map(|e| format!("{e:.6}")).unwrap_or_default(),
            format!("{:.4}", r.processing_ms),
            format!("{:.4}", r.scheduling_delay_ms),
            r.checkpoint_bytes.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> BenchError {
    BenchError::Other(format!("csv: {e}"))
}

/// Plain-text summary: comparison table followed by the checks.
pub fn summary_text(report: &Report, checks: &[Check]) -> String {
    let mut s = String::new();
    s.push_str(&format!("seed {}  precision {}  elapsed {:.2} s\n\n", report.seed, report.precision, report.elapsed_s));
    match report_compare(&report.rows) {
        Ok(cmp) => {
            s.push_str("batch_size  exact_ms  hllpp_ms  ratio  max_err%  exact_ckpt_last  hllpp_ckpt_last\n");
            for r in &cmp.rows {
                s.push_str(&format!(
                    "{:>10}  {:>8.3}  {:>8.3}  {:>5.2}  {:>8.4}  {:>15}  {:>15}\n",
                    r.batch_size,
                    r.mean_exact_ms,
                    r.mean_hllpp_ms,
                    r.time_ratio,
                    r.max_error_pct,
                    r.exact_checkpoint_bytes.last().unwrap_or(&0),
                    r.hllpp_checkpoint_bytes.last().unwrap_or(&0),
                ));
            }
        }
        Err(e) => s.push_str(&format!("{e}\n")),
    }
    s.push('\n');
    for c in checks {
        s.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    s
}

/// Writes `report.csv`, `report.json`, `cells.json` and `summary.txt` into
/// `dir`. Returns the checks.
pub fn write_reports(report: &Report, dir: &Path) -> Result<Vec<Check>, BenchError> {
    fs::create_dir_all(dir)?;
    write_csv(File::create(dir.join("report.csv"))?, &report.rows)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report.rows).map_err(io::Error::from)?)?;
    fs::write(dir.join("cells.json"), serde_json::to_vec_pretty(&report.cells).map_err(io::Error::from)?)?;
    let checks = check_report(report);
    fs::write(dir.join("summary.txt"), summary_text(report, &checks))?;
    Ok(checks)
}

/// Reads rows back from a `report.csv` or `report.json`.
pub fn load_report(path: &Path) -> Result<Vec<ReportRow>, BenchError> {
    let bytes = fs::read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_slice(&bytes).map_err(|e| BenchError::Other(format!("{}: {e}", path.display())));
    }
    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64, BenchError> {
            field(i).parse().map_err(|_| BenchError::Other(format!("bad number {:?} in column {}", field(i), CSV_HEADER[i])))
        };
        rows.push(ReportRow {
            experiment: field(0).to_owned(),
            batch_size: num(1)? as usize,
            batch_id: num(2)? as u64,
            method: field(3).parse().map_err(BenchError::Other)?,
            value: num(4)? as u64,
            error_pct: if field(5).is_empty() { None } else { Some(num(5)?) },
            processing_ms: num(6)?,
            scheduling_delay_ms: num(7)?,
            checkpoint_bytes: num(8)? as u64,
        });
    }
    Ok(rows)
}
