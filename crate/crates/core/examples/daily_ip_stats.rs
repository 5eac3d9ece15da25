//! Generates synthetic logs, runs the exact and HLL++ daily operators side
//! by side and prints per-batch cumulative counts and error.

use std::sync::Arc;

use rtstream::bench::{generate_logs, GenerateConfig, DEFAULT_INTERVAL_MS, DEFAULT_ORIGIN_MS};
use rtstream::daily::{ExactDailyOperator, HllDailyOperator};
use rtstream::engine::{CheckpointDir, Engine, EngineConfig, QueueSource, TopicSelection};
use rtstream::ingest::Ingestor;
use rtstream::queue::{Broker, BrokerConfig};

const PER_BATCH: usize = 2000;
const BATCHES: u64 = 6;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let broker = Arc::new(Broker::open(BrokerConfig::new(dir.path().join("queue"))).unwrap());
    let logs = generate_logs(&GenerateConfig::new(BATCHES * PER_BATCH as u64, 7).batch_size(PER_BATCH as u64)).unwrap();
    let receipt = Ingestor::new(broker.clone()).handle_http_post(logs.join("\n").as_bytes(), "127.0.0.1", "example").unwrap();
    println!("queued {} records", receipt.accepted);

    let source = QueueSource::new(broker, "daily", TopicSelection::Prefix("events.".into()));
    let mut engine = Engine::new(
        EngineConfig::replay(DEFAULT_INTERVAL_MS, PER_BATCH, DEFAULT_ORIGIN_MS),
        Box::new(source),
        vec![Box::new(ExactDailyOperator), Box::new(HllDailyOperator::new(14).unwrap())],
        Box::new(CheckpointDir::open(dir.path().join("ckpt")).unwrap()),
    )
    .unwrap();

    for _ in 0..BATCHES {
        let out = engine.step().unwrap();
        print!("batch {:>2} ({} records, {} B checkpoint):", out.metrics.batch_id, out.metrics.records, out.metrics.checkpoint_bytes);
        for o in &out.outputs {
            print!("  {} {}", o.operator, o.value);
        }
        println!();
    }
}
