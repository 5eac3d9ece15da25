use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rtstream::bench::{generate_logs, GenerateConfig, DEFAULT_INTERVAL_MS, DEFAULT_ORIGIN_MS};
use rtstream::daily::{ExactDailyOperator, HllDailyOperator};
use rtstream::engine::{
    BatchSource, CheckpointDir, CheckpointStore, Engine, EngineConfig, EngineError, FnOperator, KeyedState, Operator,
    QueueSource, TopicSelection,
};
use rtstream::ingest::Ingestor;
use rtstream::queue::{Broker, BrokerConfig};

pub const BATCHES: u64 = 12;
pub const PER_BATCH: usize = 400;

/// A broker preloaded with `BATCHES * PER_BATCH` generated records.
pub fn loaded_broker(dir: &Path) -> Arc<Broker> {
    let broker = Arc::new(Broker::open(BrokerConfig::new(dir)).unwrap());
    let cfg = GenerateConfig::new(BATCHES * PER_BATCH as u64, 11).batch_size(PER_BATCH as u64);
    let body = generate_logs(&cfg).unwrap().join("\n");
    let receipt = Ingestor::new(broker.clone()).handle_http_post(body.as_bytes(), "10.0.0.1", "t").unwrap();
    assert_eq!(receipt.accepted as u64, BATCHES * PER_BATCH as u64);
    broker
}

fn pipeline() -> Vec<Box<dyn Operator>> {
    vec![Box::new(ExactDailyOperator), Box::new(HllDailyOperator::new(14).unwrap())]
}

fn engine(broker: &Arc<Broker>, group: &str, store: Box<dyn CheckpointStore>) -> Engine {
    let source: Box<dyn BatchSource> = Box::new(QueueSource::new(broker.clone(), group, TopicSelection::Prefix("events.".into())));
    Engine::new(EngineConfig::replay(DEFAULT_INTERVAL_MS, PER_BATCH, DEFAULT_ORIGIN_MS), source, pipeline(), store).unwrap()
}

fn state_image(state: &KeyedState) -> (u64, BTreeMap<(String, u32), u64>, Vec<(String, Vec<u8>)>) {
    (
        state.last_batch_id(),
        state.source_offsets().clone(),
        state.iter().map(|(k, v)| (k.to_owned(), v.to_vec())).collect(),
    )
}

fn committed(broker: &Broker, group: &str) -> BTreeMap<(String, u32), u64> {
    let mut out = BTreeMap::new();
    for topic in broker.topics() {
        for (p, o) in broker.consumer_group(group, &topic).unwrap().committed {
            out.insert((topic.clone(), p), o);
        }
    }
    out
}

/// Stops after every possible batch boundary, restarts from the checkpoint
/// directory and compares the final state and checkpoint file with an
/// uninterrupted run.
pub fn kill_and_restore() -> String {
    let dir = tempfile::tempdir().unwrap();
    let broker = loaded_broker(&dir.path().join("queue"));
    let ckpt = |name: &str| CheckpointDir::open(dir.path().join("ckpt").join(name)).unwrap();

    let mut reference = engine(&broker, "ref", Box::new(ckpt("ref")));
    for _ in 0..BATCHES {
        reference.step().unwrap();
    }
    let want = state_image(reference.state());
    let want_file = std::fs::read(ckpt("ref").snapshot_path(BATCHES)).unwrap();

    for kill_after in 1..BATCHES {
        let group = format!("kill{kill_after}");
        {
            let mut e = engine(&broker, &group, Box::new(ckpt(&group)));
            for _ in 0..kill_after {
                e.step().unwrap();
            }
        }
        let mut e = engine(&broker, &group, Box::new(ckpt(&group)));
        assert_eq!(e.last_batch_id(), kill_after, "restore resumed at the wrong batch");
        while e.last_batch_id() < BATCHES {
            e.step().unwrap();
        }
        assert!(state_image(e.state()) == want, "state differs after kill at batch {kill_after}");
        let file = std::fs::read(ckpt(&group).snapshot_path(BATCHES)).unwrap();
        assert!(file == want_file, "checkpoint bytes differ after kill at batch {kill_after}");
        assert_eq!(committed(&broker, &group), committed(&broker, "ref"));
    }
    format!("{} restart points, final state and {}-byte checkpoint identical", BATCHES - 1, want_file.len())
}

struct FailingStore {
    inner: CheckpointDir,
    fail_batch: Arc<AtomicU64>,
}

impl CheckpointStore for FailingStore {
    fn write(&mut self, state: &KeyedState) -> Result<u64, EngineError> {
        if state.last_batch_id() == self.fail_batch.load(Ordering::SeqCst) {
            self.fail_batch.store(0, Ordering::SeqCst);
            return Err(EngineError::CheckpointWriteFailure(io::Error::other("disk full")));
        }
        self.inner.write(state)
    }

    fn restore(&self) -> Result<Option<KeyedState>, EngineError> {
        self.inner.restore()
    }
}

/// A checkpoint failure leaves committed offsets where they were; the retry
/// reprocesses the same records and ends where a clean run ends.
pub fn offsets_hold_on_failed_checkpoint() -> String {
    let dir = tempfile::tempdir().unwrap();
    let broker = loaded_broker(&dir.path().join("queue"));
    let mut reference = engine(&broker, "ref", Box::new(CheckpointDir::open(dir.path().join("ref")).unwrap()));
    for _ in 0..BATCHES {
        reference.step().unwrap();
    }

    let mut failures = 0;
    for fail_at in 1..=BATCHES {
        let group = format!("f{fail_at}");
        let store = FailingStore {
            inner: CheckpointDir::open(dir.path().join(&group)).unwrap(),
            fail_batch: Arc::new(AtomicU64::new(fail_at)),
        };
        let mut e = engine(&broker, &group, Box::new(store));
        for _ in 1..fail_at {
            e.step().unwrap();
        }
        let before = committed(&broker, &group);
        let image = state_image(e.state());
        assert!(matches!(e.step(), Err(EngineError::CheckpointWriteFailure(_))));
        failures += 1;
        assert_eq!(committed(&broker, &group), before, "offsets moved past failed checkpoint {fail_at}");
        assert!(state_image(e.state()) == image, "state not rolled back at {fail_at}");
        while e.last_batch_id() < BATCHES {
            e.step().unwrap();
        }
        assert!(state_image(e.state()) == state_image(reference.state()), "retry diverged after failure at {fail_at}");
    }
    format!("{failures} injected failures, offsets held and retries converged")
}

/// Wall-clock mode with an operator that needs twice the interval: every
/// batch after the first starts at least one interval late.
pub fn slowed_operator_delay(interval_ms: u64, batches: u64) -> (Vec<f64>, String) {
    let dir = tempfile::tempdir().unwrap();
    let broker = loaded_broker(&dir.path().join("queue"));
    let source: Box<dyn BatchSource> = Box::new(QueueSource::new(broker, "slow", TopicSelection::Prefix("events.".into())));
    let slow = FnOperator::new("slow", move |_b: &rtstream::engine::Batch, _s: &mut KeyedState| {
        std::thread::sleep(Duration::from_millis(2 * interval_ms));
        Ok(vec![])
    });
    let mut e = Engine::new(
        EngineConfig::wall_clock(interval_ms).stop_after(batches),
        source,
        vec![Box::new(slow)],
        Box::new(CheckpointDir::open(dir.path().join("ckpt")).unwrap()),
    )
    .unwrap();
    let delays: Vec<f64> = e.run().unwrap().iter().map(|m| m.scheduling_delay_ms).collect();
    for (i, d) in delays.iter().enumerate().skip(1) {
        assert!(*d >= interval_ms as f64, "batch {} delay {d:.1} ms < interval {interval_ms} ms", i + 1);
    }
    let shown: Vec<String> = delays.iter().map(|d| format!("{d:.0}")).collect();
    let detail = format!("interval {interval_ms} ms, delays [{}] ms", shown.join(", "));
    (delays, detail)
}
