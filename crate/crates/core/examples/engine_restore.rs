//! Runs a stateful engine for a few batches, drops it as if the process had
//! died, then builds a new engine on the same checkpoint directory and
//! continues where the first one stopped.

use std::sync::Arc;

use rtstream::bench::{generate_logs, GenerateConfig, DEFAULT_INTERVAL_MS, DEFAULT_ORIGIN_MS};
use rtstream::daily::ExactDailyOperator;
use rtstream::engine::{CheckpointDir, Engine, EngineConfig, QueueSource, TopicSelection};
use rtstream::ingest::Ingestor;
use rtstream::queue::{Broker, BrokerConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let broker = Arc::new(Broker::open(BrokerConfig::new(dir.path().join("queue"))).unwrap());
    let logs = generate_logs(&GenerateConfig::new(5000, 3).batch_size(500)).unwrap();
    Ingestor::new(broker.clone()).handle_http_post(logs.join("\n").as_bytes(), "127.0.0.1", "example").unwrap();

    let build = || {
        let source = QueueSource::new(broker.clone(), "restore", TopicSelection::Prefix("events.".into()));
        Engine::new(
            EngineConfig::replay(DEFAULT_INTERVAL_MS, 500, DEFAULT_ORIGIN_MS),
            Box::new(source),
            vec![Box::new(ExactDailyOperator)],
            Box::new(CheckpointDir::open(dir.path().join("ckpt")).unwrap()),
        )
        .unwrap()
    };

    let mut engine = build();
    for _ in 0..4 {
        let m = engine.step().unwrap().metrics;
        println!("first run: batch {} with {} records", m.batch_id, m.records);
    }
    drop(engine);

    let mut engine = build();
    println!("restored at batch {}", engine.last_batch_id());
    while engine.last_batch_id() < 10 {
        let out = engine.step().unwrap();
        println!("second run: batch {} -> {}", out.metrics.batch_id, out.outputs[0].value);
    }
}
