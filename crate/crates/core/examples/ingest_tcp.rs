//! Starts the TCP line listener and the HTTP ingest endpoint, sends records
//! through both and prints what landed in each topic.

use std::io::Write;
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use rtstream::bench::{generate_logs, GenerateConfig};
use rtstream::ingest::{http_router, serve_http, serve_tcp_lines, Ingestor};
use rtstream::queue::{Broker, BrokerConfig};

#[tokio::main]
async fn main() {
    let dir = tempfile::tempdir().unwrap();
    let broker = Arc::new(Broker::open(BrokerConfig::new(dir.path())).unwrap());
    let ingestor = Arc::new(Ingestor::new(broker.clone()));
    let tcp = serve_tcp_lines(ingestor.clone(), "127.0.0.1:0").await.unwrap();
    let http = serve_http(http_router(ingestor.clone()), "127.0.0.1:0").await.unwrap();

    let logs = generate_logs(&GenerateConfig::new(200, 1).batch_size(100)).unwrap();
    let (tcp_addr, http_addr) = (tcp.local_addr, http.local_addr);
    let (first, second) = logs.split_at(100);
    let (first, second) = (first.join("\n") + "\n", second.join("\n") + "\nnot a record\n");
    let receipt = tokio::task::spawn_blocking(move || {
        TcpStream::connect(tcp_addr).unwrap().write_all(first.as_bytes()).unwrap();
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
        let mut resp = agent.post(format!("http://{http_addr}/logs")).content_type("application/x-ndjson").send(second).unwrap();
        resp.body_mut().read_to_string().unwrap()
    })
    .await
    .unwrap();
    println!("http receipt: {receipt}");

    tokio::time::sleep(Duration::from_millis(300)).await;
    for topic in broker.topics() {
        let n: u64 = broker.end_offsets(&topic).unwrap().iter().sum();
        println!("{topic:<20} {n}");
    }
    tcp.shutdown().await;
    http.shutdown().await;
}
