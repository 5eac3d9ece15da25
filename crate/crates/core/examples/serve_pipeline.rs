//! Runs the whole service in-process: ingest, the micro-batch engine with
//! daily IP counts and sentiment triage, and the review API. Posts a few
//! comment events and waits for them to be triaged.

use std::time::{Duration, Instant};

use rtstream::serve::{review_record, ServeConfig, Server};

#[tokio::main]
async fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServeConfig::new(dir.path());
    cfg.http_addr = "127.0.0.1:0".into();
    cfg.tcp_addr = None;
    cfg.interval_ms = 200;
    let server = Server::start(cfg).await.unwrap();
    println!("listening on http://{}", server.http_addr);

    let texts = ["great pasta, friendly waiter", "refund never arrived, awful service", "ok I guess"];
    let body: Vec<String> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| review_record(t, &format!("10.0.0.{i}"), 1_704_067_200_000 + i as u64).to_json_line())
        .collect();
    let receipt = server.ingestor().handle_http_post(body.join("\n").as_bytes(), "127.0.0.1", "example").unwrap();
    println!("accepted {}", receipt.accepted);

    let deadline = Instant::now() + Duration::from_secs(10);
    let svc = server.service();
    while svc.results().rows().unwrap().len() + svc.tickets().list(None).len() < texts.len() && Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    for row in svc.results().rows().unwrap() {
        println!("auto-answered {}: {:?}", row.thread_id, row.sentiment);
    }
    for t in svc.tickets().list(None) {
        println!("ticket {} for {} is {:?}", t.ticket_id, t.thread_id, t.status);
    }
    server.shutdown().await.unwrap();
}
