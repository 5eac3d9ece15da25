//! Network front door: validates, enriches and publishes newline-delimited
//! log records arriving over HTTP (`POST /logs`) or raw TCP.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{ConnectInfo, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::queue::{Broker, QueueError};
use crate::schema::{enrich, topic_for_event, EventRegistry};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("queue unavailable: {0}")]
    QueueUnavailable(#[from] QueueError),
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub accepted: u32,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Default)]
pub struct IngestCounters {
    accepted: AtomicU64,
    malformed: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub accepted: u64,
    pub malformed: u64,
}

/// What happened to one candidate line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineOutcome {
    Published { topic: String, partition: u32, offset: u64 },
    Rejected(String),
    Blank,
}

pub struct Ingestor {
    broker: Arc<Broker>,
    registry: EventRegistry,
    counters: IngestCounters,
}

impl Ingestor {
    pub fn new(broker: Arc<Broker>) -> Self {
        Self::with_registry(broker, EventRegistry::default())
    }

    pub fn with_registry(broker: Arc<Broker>, registry: EventRegistry) -> Self {
        Self {
            broker,
            registry,
            counters: IngestCounters::default(),
        }
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            accepted: self.counters.accepted.load(Ordering::Relaxed),
            malformed: self.counters.malformed.load(Ordering::Relaxed),
        }
    }

    /// Validates, enriches and publishes a single line. Whitespace-only lines
    /// are ignored. Only a broker failure is an error.
    pub fn ingest_line(&self, line: &[u8], remote_ip: &str, user_agent: &str) -> Result<LineOutcome, IngestError> {
        if line.iter().all(u8::is_ascii_whitespace) {
            return Ok(LineOutcome::Blank);
        }
        let record = match self.registry.validate(line) {
            Ok(r) => enrich(r, remote_ip, user_agent),
            Err(failure) => {
                self.counters.malformed.fetch_add(1, Ordering::Relaxed);
                return Ok(LineOutcome::Rejected(failure.reason().to_owned()));
            }
        };
        let topic = topic_for_event(&record.event.event_name);
        let key = record.geo.ip.as_deref().map(str::as_bytes);
        let (partition, offset) = self.broker.publish(&topic, key, record.to_json_line().as_bytes())?;
        self.counters.accepted.fetch_add(1, Ordering::Relaxed);
        Ok(LineOutcome::Published { topic, partition, offset })
    }

    /// Partial acceptance: bad lines are listed with their 1-based line
    /// number, good lines are published.
    pub fn handle_http_post(&self, body: &[u8], remote_ip: &str, user_agent: &str) -> Result<IngestReceipt, IngestError> {
        let mut receipt = IngestReceipt::default();
        for (i, line) in body.split(|&b| b == b'\n').enumerate() {
            match self.ingest_line(line, remote_ip, user_agent)? {
                LineOutcome::Published { .. } => receipt.accepted += 1,
                LineOutcome::Rejected(reason) => receipt.rejected.push(Rejection { line: i as u32 + 1, reason }),
                LineOutcome::Blank => {}
            }
        }
        Ok(receipt)
    }
}

/// `POST /logs` and `GET /healthz`. Serve with
/// `into_make_service_with_connect_info::<SocketAddr>()` so the peer address
/// is available for enrichment.
pub fn http_router(ingestor: Arc<Ingestor>) -> Router {
    Router::new()
        .route("/logs", post(post_logs))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(ingestor)
}

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

async fn post_logs(State(ingestor): State<Arc<Ingestor>>, req: Request) -> Response {
    let remote_ip = req
        .extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map(|ConnectInfo(addr)| addr.ip().to_string())
        .unwrap_or_default();
    let user_agent = req
        .headers()
        .get(header::USER_AGENT)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_owned();
    let body = match axum::body::to_bytes(req.into_body(), MAX_BODY_BYTES).await {
        Ok(b) => b,
        Err(e) => return (StatusCode::PAYLOAD_TOO_LARGE, e.to_string()).into_response(),
    };
    let result = tokio::task::spawn_blocking(move || ingestor.handle_http_post(&body, &remote_ip, &user_agent)).await;
    match result {
        Ok(Ok(receipt)) => Json(receipt).into_response(),
        Ok(Err(e)) => {
            tracing::error!(error = %e, "ingest request failed");
            (StatusCode::SERVICE_UNAVAILABLE, e.to_string()).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Running server task plus its bound address.
pub struct ServerHandle {
    pub local_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let _ = self.task.await;
    }
}

async fn bind(addr: &str) -> Result<TcpListener, IngestError> {
    TcpListener::bind(addr).await.map_err(|source| IngestError::BindFailure {
        addr: addr.to_owned(),
        source,
    })
}

/// Serves the HTTP router on `addr` (use port 0 for an ephemeral port).
pub async fn serve_http(router: Router, addr: &str) -> Result<ServerHandle, IngestError> {
    let listener = bind(addr).await?;
    let local_addr = listener.local_addr().expect("bound listener has an address");
    let (tx, mut rx) = watch::channel(false);
    let task = tokio::spawn(async move {
        let service = router.into_make_service_with_connect_info::<SocketAddr>();
        let shutdown = async move {
            let _ = rx.wait_for(|stop| *stop).await;
        };
        if let Err(e) = axum::serve(listener, service).with_graceful_shutdown(shutdown).await {
            tracing::error!(error = %e, "http server stopped");
        }
    });
    Ok(ServerHandle { local_addr, shutdown: tx, task })
}

/// Accepts newline-delimited records on `addr`. Each connection is handled
/// on its own task; malformed lines are counted and dropped and the
/// connection stays open.
pub async fn serve_tcp_lines(ingestor: Arc<Ingestor>, addr: &str) -> Result<ServerHandle, IngestError> {
    let listener = bind(addr).await?;
    let local_addr = listener.local_addr().expect("bound listener has an address");
    let (tx, mut rx) = watch::channel(false);
    let task = tokio::spawn(async move {
        let conn_stop = rx.clone();
        loop {
            tokio::select! {
                _ = rx.wait_for(|stop| *stop) => break,
                accepted = listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        tokio::spawn(handle_connection(ingestor.clone(), stream, peer, conn_stop.clone()));
                    }
                    Err(e) => tracing::warn!(error = %e, "tcp accept failed"),
                },
            }
        }
    });
    Ok(ServerHandle { local_addr, shutdown: tx, task })
}

async fn handle_connection(ingestor: Arc<Ingestor>, stream: TcpStream, peer: SocketAddr, mut stop: watch::Receiver<bool>) {
    let remote_ip = peer.ip().to_string();
    let mut lines = BufReader::new(stream).lines();
    loop {
        let line = tokio::select! {
            _ = stop.wait_for(|s| *s) => return,
            next = lines.next_line() => next,
        };
        match line {
            Ok(Some(line)) => {
                if let Err(e) = ingestor.ingest_line(line.as_bytes(), &remote_ip, "") {
                    tracing::error!(error = %e, %peer, "dropping tcp connection");
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                // Invalid UTF-8 ends up here; count it and keep reading.
                if e.kind() == io::ErrorKind::InvalidData {
                    ingestor.counters.malformed.fetch_add(1, Ordering::Relaxed);
                    continue;
                }
                tracing::debug!(error = %e, %peer, "tcp read failed");
                return;
            }
        }
    }
}
