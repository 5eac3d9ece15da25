//! Classifies a handful of reviews with the lexicon classifier, lists the
//! escalated ones through the review HTTP API and resolves one of them.

use std::sync::Arc;

use rtstream::ingest::serve_http;
use rtstream::sentiment::{review_router, LexiconClassifier, ResultsLog, ReviewService, SentimentConfig, TicketStore};
use rtstream::workflow::{MemoryCheckpointer, Outcome};

const REVIEWS: &[&str] = &[
    "Lovely dinner, the staff were great",
    "I was charged twice and nobody answers my emails",
    "The app crashes every time I open the menu",
    "Decent coffee, nothing special",
];

#[tokio::main]
async fn main() {
    let cfg = Arc::new(SentimentConfig::default());
    let svc = Arc::new(ReviewService::new(
        Arc::new(LexiconClassifier::new(&cfg)),
        cfg,
        Arc::new(MemoryCheckpointer::new()),
        Arc::new(TicketStore::in_memory()),
        Arc::new(ResultsLog::in_memory()),
    ));

    for (i, text) in REVIEWS.iter().enumerate() {
        match svc.submit(&format!("review-{i}"), text).unwrap() {
            Outcome::Finished(s) => println!("auto  {text:?} -> {}", s.get_str("response").unwrap_or("")),
            Outcome::Interrupted { ticket_id, .. } => println!("human {text:?} -> ticket {ticket_id}"),
        }
    }

    let server = serve_http(review_router(svc.clone()), "127.0.0.1:0").await.unwrap();
    let base = format!("http://{}/api/reviews", server.local_addr);
    let (pending, resolved) = tokio::task::spawn_blocking(move || {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
        let raw = agent.get(format!("{base}?status=pending")).call().unwrap().body_mut().read_to_string().unwrap();
        let pending: serde_json::Value = serde_json::from_str(&raw).unwrap();
        let id = pending[0]["ticket_id"].as_str().unwrap().to_owned();
        let body = serde_json::json!({"response": "Sorry about that, we've refunded you.", "reviewer": "sam"}).to_string();
        let url = format!("{base}/{id}/resolve");
        let first = agent.post(&url).content_type("application/json").send(&body).unwrap().status().as_u16();
        let again = agent.post(&url).content_type("application/json").send(&body).unwrap().status().as_u16();
        (pending, (first, again))
    })
    .await
    .unwrap();

    println!("pending via API: {}", pending.as_array().unwrap().len());
    println!("resolve: {}, resolve again: {}", resolved.0, resolved.1);
    server.shutdown().await;
}
