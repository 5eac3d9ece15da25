//! Interactive service: HTTP and TCP ingest, a wall-clock engine running the
//! daily distinct-IP operators and the sentiment bridge, and the review API,
//! all sharing one data directory.
//!
//! Layout under `data_dir`: `queue/`, `checkpoints/`, `workflow/threads/`,
//! `tickets.ndjson`, `results.ndjson` and `metrics.ndjson`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Deserialize;
use thiserror::Error;

use crate::cardinality::{CardinalitySketch, DEFAULT_PRECISION};
use crate::daily::{ExactDailyOperator, HllDailyOperator};
use crate::engine::{CheckpointDir, Engine, EngineConfig, EngineError, QueueSource, TopicSelection};
use crate::ingest::{http_router, serve_http, serve_tcp_lines, IngestError, Ingestor, ServerHandle};
use crate::queue::{Broker, BrokerConfig, QueueError};
use crate::schema::{AppDomain, DeviceDomain, EventDomain, GeoDomain, LogRecord, ResultDomain, TimeDomain, UserDomain};
use crate::sentiment::{
    review_router, Classifier, LexiconClassifier, ResultsLog, ReviewService, SentimentBridge, SentimentConfig, TicketError,
    TicketStore,
};
use crate::workflow::{FileCheckpointer, WorkflowError};

pub const REVIEW_TOPIC: &str = "events.comment";

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Tickets(#[from] TicketError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("engine thread panicked")]
    EnginePanicked,
}

pub struct ServeConfig {
    pub data_dir: PathBuf,
    /// Engine checkpoints; defaults to `<data_dir>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    pub http_addr: String,
    /// `None` disables the TCP listener.
    pub tcp_addr: Option<String>,
    pub interval_ms: u64,
    pub precision: u8,
    pub sample_rate: f64,
    pub review_topic: String,
    pub sentiment: SentimentConfig,
    /// Defaults to the lexicon classifier built from `sentiment`.
    pub classifier: Option<Arc<dyn Classifier>>,
    pub bridge_parallelism: usize,
}

impl ServeConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            checkpoint_dir: None,
            http_addr: "127.0.0.1:8080".into(),
            tcp_addr: Some("127.0.0.1:9090".into()),
            interval_ms: 2_000,
            precision: DEFAULT_PRECISION,
            sample_rate: 1.0,
            review_topic: REVIEW_TOPIC.into(),
            sentiment: SentimentConfig::default(),
            classifier: None,
            bridge_parallelism: 4,
        }
    }
}

pub struct Server {
    pub http_addr: std::net::SocketAddr,
    pub tcp_addr: Option<std::net::SocketAddr>,
    service: Arc<ReviewService>,
    ingestor: Arc<Ingestor>,
    http: ServerHandle,
    tcp: Option<ServerHandle>,
    engine_stop: Arc<std::sync::atomic::AtomicBool>,
    engine: JoinHandle<Result<(), EngineError>>,
}

impl Server {
    /// Opens all stores, restores engine state and starts listening. Must
    /// be called inside a multi-threaded Tokio runtime.
    pub async fn start(cfg: ServeConfig) -> Result<Server, ServeError> {
        let data = &cfg.data_dir;
        std::fs::create_dir_all(data)?;
        CardinalitySketch::new(cfg.precision).map_err(EngineError::from)?;
        let broker = Arc::new(Broker::open(BrokerConfig::new(data.join("queue")))?);
        let ingestor = Arc::new(Ingestor::new(broker.clone()));

        let classifier = cfg
            .classifier
            .clone()
            .unwrap_or_else(|| Arc::new(LexiconClassifier::new(&cfg.sentiment)));
        let service = Arc::new(ReviewService::new(
            classifier,
            Arc::new(cfg.sentiment.clone()),
            Arc::new(FileCheckpointer::open(data.join("workflow"))?),
            Arc::new(TicketStore::open(data.join("tickets.ndjson"))?),
            Arc::new(ResultsLog::open(data.join("results.ndjson"))?),
        ));

        let bridge = SentimentBridge::new(service.clone(), cfg.review_topic.clone(), cfg.sample_rate)
            .parallelism(cfg.bridge_parallelism);
        let ckpt = cfg.checkpoint_dir.clone().unwrap_or_else(|| data.join("checkpoints"));
        let metrics = OpenOptions::new().create(true).append(true).open(data.join("metrics.ndjson"))?;
        let mut engine = Engine::new(
            EngineConfig::wall_clock(cfg.interval_ms),
            Box::new(QueueSource::new(broker.clone(), "serve", TopicSelection::Prefix("events.".into()))),
            vec![
                Box::new(ExactDailyOperator),
                Box::new(HllDailyOperator::new(cfg.precision).map_err(EngineError::from)?),
                Box::new(bridge),
            ],
            Box::new(CheckpointDir::open(ckpt)?),
        )?
        .with_metrics_sink(Box::new(metrics));
        let engine_stop = engine.shutdown_handle();
        let engine = std::thread::Builder::new()
            .name("engine".into())
            .spawn(move || engine.run().map(|_| ()))?;

        let router = http_router(ingestor.clone()).merge(review_router(service.clone()));
        let http = serve_http(router, &cfg.http_addr).await?;
        let tcp = match &cfg.tcp_addr {
            Some(addr) => Some(serve_tcp_lines(ingestor.clone(), addr).await?),
            None => None,
        };
        tracing::info!(http = %http.local_addr, tcp = ?tcp.as_ref().map(|t| t.local_addr), "serving");
        Ok(Server {
            http_addr: http.local_addr,
            tcp_addr: tcp.as_ref().map(|t| t.local_addr),
            service,
            ingestor,
            http,
            tcp,
            engine_stop,
            engine,
        })
    }

    pub fn service(&self) -> &Arc<ReviewService> {
        &self.service
    }

    pub fn ingestor(&self) -> &Arc<Ingestor> {
        &self.ingestor
    }

    /// Stops listeners, lets the engine finish its current batch and waits
    /// for it.
    pub async fn shutdown(self) -> Result<(), ServeError> {
        self.http.shutdown().await;
        if let Some(t) = self.tcp {
            t.shutdown().await;
        }
        self.engine_stop.store(true, Ordering::SeqCst);
        let engine = self.engine;
        tokio::task::spawn_blocking(move || engine.join())
            .await
            .map_err(|_| ServeError::EnginePanicked)?
            .map_err(|_| ServeError::EnginePanicked)??;
        Ok(())
    }
}

/// One line of `fixtures/reviews.ndjson`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FixtureReview {
    pub id: u64,
    pub text: String,
    pub label: String,
    pub escalate: bool,
}

pub fn load_review_fixture(path: impl AsRef<Path>) -> std::io::Result<Vec<FixtureReview>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// A `comment` event carrying `text` as its review.
pub fn review_record(text: &str, ip: &str, ts_ms: u64) -> LogRecord {
    LogRecord {
        app: AppDomain {
            app_id: "reviews".into(),
            version: "1.0.0".into(),
            app_type: "web".into(),
        },
        device: DeviceDomain {
            os: "unknown".into(),
            resolution: "unknown".into(),
            model: "unknown".into(),
            user_agent: None,
        },
        user: UserDomain {
            device_id: format!("dev-{ip}"),
            user_id: String::new(),
        },
        event: EventDomain {
            event_name: "comment".into(),
        },
        object: [("review_text".to_string(), text.to_string())].into_iter().collect(),
        time: TimeDomain {
            start_ts: ts_ms,
            end_ts: ts_ms,
        },
        geo: GeoDomain {
            ip: Some(ip.into()),
            latitude: None,
            longitude: None,
            network_type: "unknown".into(),
        },
        result: ResultDomain {
            code: "0".into(),
            detail: None,
        },
    }
}
