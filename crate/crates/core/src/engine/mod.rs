//! Discretized-stream executor.
//!
//! Each batch: fetch from the source, decode records, run the operator
//! pipeline against the keyed state, checkpoint, then commit source offsets.
//! Offsets never move unless the checkpoint succeeded; on any failure the
//! state is reloaded from the last good checkpoint.

mod checkpoint;
mod source;
mod state;

pub use checkpoint::{CheckpointDir, CheckpointStore, FORMAT_VERSION as CHECKPOINT_FORMAT_VERSION, HEADER_LEN as CHECKPOINT_HEADER_LEN};
pub use source::{BatchSource, QueueSource, TopicSelection};
pub use state::{update_state_by_key, KeyedState, StateCodec, U64Codec};

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::cardinality::SketchError;
use crate::queue::QueueError;
use crate::schema::{EventRegistry, LogRecord};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint write failed: {0}")]
    CheckpointWriteFailure(io::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("cannot decode {family} state at {key}: {reason}")]
    CodecFailure {
        family: &'static str,
        key: String,
        reason: String,
    },
    #[error("operator {operator} failed: {reason}")]
    Operator { operator: String, reason: String },
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Source(#[from] QueueError),
}

/// A decoded record with its queue coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedRecord {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
    pub record: LogRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_id: u64,
    /// `[start, end)` in engine-clock milliseconds.
    pub window: (u64, u64),
    pub records: Vec<SourcedRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchMetrics {
    pub batch_id: u64,
    pub window_start: u64,
    pub window_end: u64,
    pub records: u64,
    /// Messages that failed validation and were dropped.
    pub skipped: u64,
    pub processing_ms: f64,
    pub scheduling_delay_ms: f64,
    pub checkpoint_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorOutput {
    pub operator: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub metrics: BatchMetrics,
    pub outputs: Vec<OperatorOutput>,
}

/// One step of the per-batch pipeline.
pub trait Operator: Send {
    fn name(&self) -> &str;
    fn process(&mut self, batch: &Batch, state: &mut KeyedState) -> Result<Vec<Value>, EngineError>;
}

/// Adapts a closure into an [`Operator`].
pub struct FnOperator<F> {
    name: String,
    f: F,
}

impl<F> FnOperator<F>
where
    F: FnMut(&Batch, &mut KeyedState) -> Result<Vec<Value>, EngineError> + Send,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> Operator for FnOperator<F>
where
    F: FnMut(&Batch, &mut KeyedState) -> Result<Vec<Value>, EngineError> + Send,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, batch: &Batch, state: &mut KeyedState) -> Result<Vec<Value>, EngineError> {
        (self.f)(batch, state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchingMode {
    /// Batch = next `records_per_batch` messages; the clock is simulated and
    /// advances by one interval per batch starting at `origin_ms`.
    Replay { records_per_batch: usize, origin_ms: u64 },
    /// Real interval timer; each batch drains up to `max_records` messages.
    WallClock { max_records: usize },
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub interval_ms: u64,
    pub mode: BatchingMode,
    /// Stop after this many batches in this run.
    pub stop_after: Option<u64>,
}

impl EngineConfig {
    pub fn replay(interval_ms: u64, records_per_batch: usize, origin_ms: u64) -> Self {
        Self {
            interval_ms,
            mode: BatchingMode::Replay {
                records_per_batch,
                origin_ms,
            },
            stop_after: None,
        }
    }

    pub fn wall_clock(interval_ms: u64) -> Self {
        Self {
            interval_ms,
            mode: BatchingMode::WallClock { max_records: 1_000_000 },
            stop_after: None,
        }
    }

    pub fn stop_after(mut self, batches: u64) -> Self {
        self.stop_after = Some(batches);
        self
    }
}

pub struct Engine {
    config: EngineConfig,
    source: Box<dyn BatchSource>,
    pipeline: Vec<Box<dyn Operator>>,
    store: Box<dyn CheckpointStore>,
    registry: EventRegistry,
    state: KeyedState,
    metrics_sink: Option<Box<dyn Write + Send>>,
    shutdown: Arc<AtomicBool>,
    /// Replay mode: simulated time at which the previous batch finished.
    sim_busy_until: f64,
    /// Wall-clock mode: run start and batches scheduled so far.
    wall_start: Option<(Instant, u64)>,
    wall_batches: u64,
}

fn epoch_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Engine {
    /// Builds an engine, restoring state from `store` when a checkpoint exists.
    pub fn new(
        config: EngineConfig,
        source: Box<dyn BatchSource>,
        pipeline: Vec<Box<dyn Operator>>,
        store: Box<dyn CheckpointStore>,
    ) -> Result<Self, EngineError> {
        if config.interval_ms == 0 {
            return Err(EngineError::InvalidConfig("interval_ms must be positive".into()));
        }
        if pipeline.is_empty() {
            return Err(EngineError::InvalidConfig("pipeline must not be empty".into()));
        }
        if let BatchingMode::Replay { records_per_batch: 0, .. } = config.mode {
            return Err(EngineError::InvalidConfig("records_per_batch must be positive".into()));
        }
        let mut engine = Self {
            config,
            source,
            pipeline,
            store,
            registry: EventRegistry::default(),
            state: KeyedState::new(),
            metrics_sink: None,
            shutdown: Arc::new(AtomicBool::new(false)),
            sim_busy_until: 0.0,
            wall_start: None,
            wall_batches: 0,
        };
        if let Some(restored) = engine.store.restore()? {
            // Offsets may lag the checkpoint if the process died between the two writes.
            if !restored.source_offsets.is_empty() {
                engine.source.commit(&restored.source_offsets)?;
            }
            engine.state = restored;
        }
        Ok(engine)
    }

    pub fn with_registry(mut self, registry: EventRegistry) -> Self {
        self.registry = registry;
        self
    }

    /// Writes each batch's metrics as one JSON line.
    pub fn with_metrics_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.metrics_sink = Some(sink);
        self
    }

    /// Flag that stops [`Engine::run`] before the next batch.
    pub fn shutdown_handle(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    pub fn state(&self) -> &KeyedState {
        &self.state
    }

    pub fn last_batch_id(&self) -> u64 {
        self.state.last_batch_id
    }

    /// Runs batches until `stop_after` is reached or shutdown is requested.
    pub fn run(&mut self) -> Result<Vec<BatchMetrics>, EngineError> {
        let mut metrics = Vec::new();
        self.run_with(|outcome| metrics.push(outcome.metrics.clone()))?;
        Ok(metrics)
    }

    pub fn run_with(&mut self, mut on_batch: impl FnMut(&BatchOutcome)) -> Result<(), EngineError> {
        let mut done = 0u64;
        while self.config.stop_after.is_none_or(|n| done < n) && !self.shutdown.load(Ordering::SeqCst) {
            let outcome = self.step()?;
            on_batch(&outcome);
            done += 1;
        }
        Ok(())
    }

    /// Processes exactly one batch.
    pub fn step(&mut self) -> Result<BatchOutcome, EngineError> {
        let batch_id = self.state.last_batch_id + 1;
        let interval = self.config.interval_ms;
        let (window, max_records, delay_ms) = match self.config.mode {
            BatchingMode::Replay {
                records_per_batch,
                origin_ms,
            } => {
                let start = origin_ms + (batch_id - 1) * interval;
                let scheduled = (start + interval) as f64;
                let delay = (self.sim_busy_until - scheduled).max(0.0);
                ((start, start + interval), records_per_batch, delay)
            }
            BatchingMode::WallClock { max_records } => {
                let (t0, epoch0) = *self.wall_start.get_or_insert_with(|| (Instant::now(), epoch_ms()));
                self.wall_batches += 1;
                let offset = Duration::from_millis(self.wall_batches * interval);
                let scheduled = t0 + offset;
                let now = Instant::now();
                if scheduled > now {
                    std::thread::sleep(scheduled - now);
                }
                let delay = Instant::now().saturating_duration_since(scheduled).as_secs_f64() * 1e3;
                let end = epoch0 + self.wall_batches * interval;
                ((end - interval, end), max_records, delay)
            }
        };

        let messages = self.source.fetch(max_records)?;
        let mut next_offsets: BTreeMap<(String, u32), u64> = BTreeMap::new();
        let mut records = Vec::with_capacity(messages.len());
        let mut skipped = 0u64;
        for m in messages {
            let slot = next_offsets.entry((m.topic.clone(), m.partition)).or_insert(0);
            *slot = (*slot).max(m.offset + 1);
            match self.registry.validate(&m.payload) {
                Ok(record) => records.push(SourcedRecord {
                    topic: m.topic,
                    partition: m.partition,
                    offset: m.offset,
                    record,
                }),
                Err(_) => skipped += 1,
            }
        }
        let batch = Batch {
            batch_id,
            window,
            records,
        };

        let started = Instant::now();
        let mut outputs = Vec::new();
        for op in &mut self.pipeline {
            match op.process(&batch, &mut self.state) {
                Ok(values) => outputs.extend(values.into_iter().map(|value| OperatorOutput {
                    operator: op.name().to_owned(),
                    value,
                })),
                Err(e) => {
                    self.rollback()?;
                    return Err(e);
                }
            }
        }
        let processing_ms = started.elapsed().as_secs_f64() * 1e3;

        self.state.last_batch_id = batch_id;
        self.state.source_offsets.extend(next_offsets.clone());
        let checkpoint_bytes = match self.store.write(&self.state) {
            Ok(n) => n,
            Err(e) => {
                self.rollback()?;
                return Err(e);
            }
        };
        self.source.commit(&next_offsets)?;

        if let BatchingMode::Replay { .. } = self.config.mode {
            let scheduled = (window.1) as f64;
            self.sim_busy_until = scheduled + delay_ms + processing_ms;
        }
        let metrics = BatchMetrics {
            batch_id,
            window_start: window.0,
            window_end: window.1,
            records: batch.records.len() as u64,
            skipped,
            processing_ms,
            scheduling_delay_ms: delay_ms,
            checkpoint_bytes,
        };
        if let Some(sink) = &mut self.metrics_sink {
            let line = serde_json::to_string(&metrics).expect("metrics serialize");
            // Metrics are advisory; a broken sink must not fail the batch.
            let _ = writeln!(sink, "{line}").and_then(|_| sink.flush());
        }
        Ok(BatchOutcome { metrics, outputs })
    }

    fn rollback(&mut self) -> Result<(), EngineError> {
        self.state = self.store.restore()?.unwrap_or_default();
        Ok(())
    }
}
