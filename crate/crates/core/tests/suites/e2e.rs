use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rtstream::serve::{load_review_fixture, review_record, FixtureReview, ServeConfig, Server};
use serde_json::json;
use super::http;

pub fn fixture() -> Vec<FixtureReview> {
    load_review_fixture(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reviews.ndjson")).unwrap()
}

pub fn config(dir: &Path) -> ServeConfig {
    let mut cfg = ServeConfig::new(dir);
    cfg.http_addr = "127.0.0.1:0".into();
    cfg.tcp_addr = Some("127.0.0.1:0".into());
    cfg.interval_ms = 100;
    cfg
}

pub fn wait_until(what: &str, mut done: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(60);
    while !done() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(50));
    }
}

pub fn ndjson(reviews: &[FixtureReview]) -> String {
    reviews
        .iter()
        .enumerate()
        .map(|(i, r)| review_record(&r.text, &format!("10.1.{}.{}", i / 200, i % 200 + 1), 1_760_000_000_000 + i as u64).to_json_line() + "\n")
        .collect()
}

/// Multiset of review texts.
fn texts<'a>(it: impl Iterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in it {
        *m.entry(t.to_owned()).or_insert(0) += 1;
    }
    m
}

/// Runs the bundled review fixture through `serve` over HTTP: tickets must
/// match the fixture's escalation labels and all resolve via the API.
pub fn serve_fixture() -> String {
    let reviews = fixture();
    assert_eq!(reviews.len(), 200);
    let expected = texts(reviews.iter().filter(|r| r.escalate).map(|r| r.text.as_str()));
    let escalations: usize = expected.values().sum();

    let dir = tempfile::tempdir().unwrap();
    let data: PathBuf = dir.path().to_owned();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let server = rt.block_on(Server::start(config(&data))).unwrap();
    let base = format!("http://{}", server.http_addr);

    // Submit through the public ingest endpoint, like any log producer.
    let (status, receipt) = http::post(&format!("{base}/logs"), "application/x-ndjson", &ndjson(&reviews));
    assert_eq!(status, 200);
    assert_eq!(receipt["accepted"], 200);

    let svc = server.service().clone();
    wait_until("all reviews processed", || {
        let (pending, resolved) = svc.tickets().counts();
        svc.results().rows().unwrap().len() + pending + resolved >= 200
    });
    std::thread::sleep(Duration::from_millis(300));

    let (status, pending) = http::get(&format!("{base}/api/reviews?status=pending"));
    assert_eq!(status, 200);
    let pending = pending.as_array().unwrap().clone();
    assert_eq!(pending.len(), escalations);
    assert_eq!(texts(pending.iter().map(|t| t["query"].as_str().unwrap())), expected);
    assert_eq!(svc.results().rows().unwrap().len(), 200 - escalations);

    // Every ticket is resolvable over HTTP alone.
    for t in &pending {
        let id = t["ticket_id"].as_str().unwrap();
        let (status, out) = http::get(&format!("{base}/api/reviews/{id}"));
        assert_eq!((status, &out["status"]), (200, &json!("pending")));
        let body = json!({"response": format!("Thanks for telling us ({id})."), "reviewer": "e2e"});
        let (status, out) = http::post_json(&format!("{base}/api/reviews/{id}/resolve"), &body);
        assert_eq!(status, 200, "{out}");
        assert_eq!(out["state"]["response"], body["response"]);
        assert_eq!(out["state"]["escalated"], true);
        assert_eq!(http::post_json(&format!("{base}/api/reviews/{id}/resolve"), &body).0, 409);
    }
    assert_eq!(http::get(&format!("{base}/api/reviews?status=pending")).1, json!([]));
    assert_eq!(svc.results().rows().unwrap().len(), 200);
    rt.block_on(server.shutdown()).unwrap();

    // A restart reuses the stores and does not reprocess anything.
    let server = rt.block_on(Server::start(config(&data))).unwrap();
    std::thread::sleep(Duration::from_millis(500));
    let base = format!("http://{}", server.http_addr);
    let resolved = http::get(&format!("{base}/api/reviews?status=resolved")).1;
    assert_eq!(resolved.as_array().unwrap().len(), escalations);
    assert_eq!(http::get(&format!("{base}/api/reviews?status=pending")).1, json!([]));
    assert_eq!(server.service().results().rows().unwrap().len(), 200);
    rt.block_on(server.shutdown()).unwrap();
    format!("200 reviews, {escalations} tickets matched the fixture and resolved over HTTP, state kept across restart")
}
