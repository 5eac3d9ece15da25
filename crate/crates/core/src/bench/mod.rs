//! Synthetic workload generator and the exact-vs-estimate experiment that
//! drives it through ingest, queue and engine.

mod generate;
mod report;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{
    generate_logs, padded_ip, GenerateConfig, GenerateError, DEFAULT_INTERVAL_MS, DEFAULT_ORIGIN_MS, DEFAULT_RECORD_SIZE,
    FILLER_KEY,
};
pub use report::{check_report, load_report, summary_text, report_compare, write_reports, Check, Comparison, CompareRow, IncompleteReport};

use crate::cardinality::DEFAULT_PRECISION;
use crate::daily::{error_report, DayKey, EstimateDayUpdate, ExactDailyOperator, ExactDayUpdate, HllDailyOperator, Method};
use crate::engine::{CheckpointDir, Engine, EngineConfig, EngineError, Operator, QueueSource, TopicSelection};
use crate::ingest::{IngestError, Ingestor};
use crate::queue::{Broker, BrokerConfig, QueueError};
use crate::schema::validate;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub batch_sizes: Vec<usize>,
    pub batches: u64,
    pub interval_ms: u64,
    pub methods: Vec<Method>,
    pub precision: u8,
    pub seed: u64,
    /// Reports are written here.
    pub out_dir: PathBuf,
    /// Broker data; defaults to `<out_dir>/data`.
    pub data_dir: Option<PathBuf>,
    /// Engine checkpoints; defaults to `<out_dir>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    pub batches_per_day: Option<u64>,
    pub partitions: u32,
}

pub const DEFAULT_SEED: u64 = 20240101;

impl ExperimentConfig {
    /// Three batch sizes of 12 batches, both methods, p = 14.
    pub fn default_grid(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            batch_sizes: vec![3000, 5000, 10000],
            batches: 12,
            interval_ms: DEFAULT_INTERVAL_MS,
            methods: vec![Method::Exact, Method::Hllpp],
            precision: DEFAULT_PRECISION,
            seed: DEFAULT_SEED,
            out_dir: out_dir.into(),
            data_dir: None,
            checkpoint_dir: None,
            batches_per_day: None,
            partitions: 4,
        }
    }

    fn data_root(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    fn checkpoint_root(&self) -> PathBuf {
        self.checkpoint_dir.clone().unwrap_or_else(|| self.out_dir.join("checkpoints"))
    }
}

/// One report line: a method's result for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub batch_size: usize,
    pub batch_id: u64,
    pub method: Method,
    pub value: u64,
    /// Estimate vs. exact; empty for the exact method.
    pub error_pct: Option<f64>,
    pub processing_ms: f64,
    pub scheduling_delay_ms: f64,
    pub checkpoint_bytes: u64,
}

/// Per-cell bookkeeping used by the conservation and oracle checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub experiment: String,
    pub batch_size: usize,
    pub generated: u64,
    pub ingested: u64,
    /// Records the engine processed, per method.
    pub processed: BTreeMap<String, u64>,
    pub exact_first_seen_sum: u64,
    /// Final exact count summed over days.
    pub exact_final: Option<u64>,
    /// Brute-force distinct count over the generated lines, summed over days.
    pub oracle_final: u64,
    pub elapsed_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub precision: u8,
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellSummary>,
    pub elapsed_s: f64,
}

pub fn experiment_name(batch_size: usize) -> String {
    format!("b{batch_size}")
}

/// Runs every batch size in turn. A failing cell is recorded in its summary
/// and does not stop the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, BenchError> {
    if config.methods.is_empty() || config.batch_sizes.is_empty() || config.batches == 0 {
        return Err(BenchError::Other("need at least one method, batch size and batch".into()));
    }
    let started = Instant::now();
    let mut report = Report {
        seed: config.seed,
        precision: config.precision,
        ..Report::default()
    };
    for &n in &config.batch_sizes {
        let mut cell = CellSummary {
            experiment: experiment_name(n),
            batch_size: n,
            ..CellSummary::default()
        };
        let t = Instant::now();
        match run_cell(config, n, &mut cell) {
            Ok(rows) => report.rows.extend(rows),
            Err(e) => {
                tracing::error!(batch_size = n, error = %e, "experiment cell failed");
                cell.error = Some(e.to_string());
            }
        }
        cell.elapsed_ms = t.elapsed().as_secs_f64() * 1e3;
        report.cells.push(cell);
    }
    report.elapsed_s = started.elapsed().as_secs_f64();
    Ok(report)
}

fn fresh_dir(path: &Path) -> Result<(), BenchError> {
    if path.exists() {
        fs::remove_dir_all(path)?;
    }
    fs::create_dir_all(path)?;
    Ok(())
}

/// Cumulative distinct IPs per batch for the day that batch falls on.
fn oracle_by_batch(lines: &[String], batch_size: usize) -> Vec<(DayKey, u64)> {
    let mut per_day: BTreeMap<DayKey, HashSet<String>> = BTreeMap::new();
    let mut out = Vec::new();
    for chunk in lines.chunks(batch_size) {
        let mut day = None;
        for l in chunk {
            let r = validate(l.as_bytes()).expect("generated lines validate");
            let d = DayKey::of(&r);
            per_day.entry(d.clone()).or_default().insert(r.geo.ip.unwrap_or_default());
            day = Some(d);
        }
        let d = day.expect("non-empty batch");
        let n = per_day[&d].len() as u64;
        out.push((d, n));
    }
    out
}

fn run_cell(config: &ExperimentConfig, n: usize, cell: &mut CellSummary) -> Result<Vec<ReportRow>, BenchError> {
    let exp = experiment_name(n);
    let mut gen = GenerateConfig::new(n as u64 * config.batches, config.seed).batch_size(n as u64);
    gen.interval_ms = config.interval_ms;
    gen.batches_per_day = config.batches_per_day;
    let lines = generate_logs(&gen)?;
    cell.generated = lines.len() as u64;
    let oracle = oracle_by_batch(&lines, n);
    cell.oracle_final = {
        let mut last: BTreeMap<&DayKey, u64> = BTreeMap::new();
        for (d, v) in &oracle {
            last.insert(d, *v);
        }
        last.values().sum()
    };

    let queue_dir = config.data_root().join(&exp);
    fresh_dir(&queue_dir)?;
    let broker = Arc::new(Broker::open(
        BrokerConfig {
            sync_writes: false,
            ..BrokerConfig::new(&queue_dir)
        }
        .partitions(config.partitions),
    )?);
    let ingestor = Ingestor::new(broker.clone());

    let mut engines = Vec::new();
    for &method in &config.methods {
        let ckpt = config.checkpoint_root().join(&exp).join(method.to_string());
        fresh_dir(&ckpt)?;
        let op: Box<dyn Operator> = match method {
            Method::Exact => Box::new(ExactDailyOperator),
            Method::Hllpp => Box::new(HllDailyOperator::new(config.precision).map_err(EngineError::from)?),
        };
        let source = QueueSource::new(broker.clone(), format!("bench-{method}"), TopicSelection::Prefix("events.".into()));
        let engine = Engine::new(
            EngineConfig::replay(config.interval_ms, n, gen.origin_ms),
            Box::new(source),
            vec![op],
            Box::new(CheckpointDir::open(ckpt)?),
        )?;
        engines.push((method, engine));
    }

    let mut rows = Vec::new();
    for (b, chunk) in lines.chunks(n).enumerate() {
        let body = chunk.join("\n");
        let receipt = ingestor.handle_http_post(body.as_bytes(), "", "rtstream-bench")?;
        if !receipt.rejected.is_empty() {
            return Err(BenchError::Other(format!("{} generated records rejected at ingest", receipt.rejected.len())));
        }
        cell.ingested += receipt.accepted as u64;
        let (day, exact_now) = &oracle[b];

        for (method, engine) in &mut engines {
            let outcome = engine.step()?;
            *cell.processed.entry(method.to_string()).or_default() += outcome.metrics.records;
            let value = match method {
                Method::Exact => {
                    let updates: Vec<ExactDayUpdate> = outcome
                        .outputs
                        .iter()
                        .map(|o| serde_json::from_value(o.value.clone()).expect("exact operator output"))
                        .collect();
                    cell.exact_first_seen_sum += updates.iter().map(|u| u.first_seen_in_batch).sum::<u64>();
                    updates.iter().find(|u| &u.day == day).map_or(0, |u| u.cumulative)
                }
                Method::Hllpp => outcome
                    .outputs
                    .iter()
                    .map(|o| serde_json::from_value::<EstimateDayUpdate>(o.value.clone()).expect("hll operator output"))
                    .find(|u| &u.day == day)
                    .map_or(0, |u| u.estimate),
            };
            let error_pct = match method {
                Method::Exact => None,
                Method::Hllpp => error_report(*exact_now, value).ok(),
            };
            rows.push(ReportRow {
                experiment: exp.clone(),
                batch_size: n,
                batch_id: outcome.metrics.batch_id,
                method: *method,
                value,
                error_pct,
                processing_ms: outcome.metrics.processing_ms,
                scheduling_delay_ms: outcome.metrics.scheduling_delay_ms,
                checkpoint_bytes: outcome.metrics.checkpoint_bytes,
            });
        }
    }
    for (method, engine) in &engines {
        if *method == Method::Exact {
            let total = engine
                .state()
                .with_prefix("exact/")
                .map(|(_, blob)| crate::cardinality::ExactDistinctState::from_bytes(blob).map(|s| s.count()))
                .collect::<Result<Vec<u64>, _>>()
                .map_err(|e| BenchError::Other(e.to_string()))?;
            cell.exact_final = Some(total.iter().sum());
        }
    }
    Ok(rows)
}
