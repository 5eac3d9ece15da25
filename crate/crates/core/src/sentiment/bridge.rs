use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use super::ReviewService;
use crate::cardinality::hash64;
use crate::engine::{Batch, EngineError, KeyedState, Operator, SourcedRecord};
use crate::workflow::Outcome;

/// Object-domain attribute holding the review text.
pub const REVIEW_TEXT_KEY: &str = "review_text";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BridgeStats {
    /// Records on the bridged topic.
    pub seen: u64,
    pub sampled: u64,
    pub missing_text: u64,
    /// Sampled records whose thread already exists, e.g. after redelivery.
    pub already_processed: u64,
    pub finished: u64,
    pub interrupted: u64,
    pub failed: u64,
}

impl BridgeStats {
    fn add(&mut self, o: &BridgeStats) {
        self.seen += o.seen;
        self.sampled += o.sampled;
        self.missing_text += o.missing_text;
        self.already_processed += o.already_processed;
        self.finished += o.finished;
        self.interrupted += o.interrupted;
        self.failed += o.failed;
    }
}

/// Engine operator that feeds review records from one topic into the
/// sentiment workflow, one thread per record (`<topic>/<partition>/<offset>`).
///
/// Sampling is a pure function of the thread id, so a redelivered record
/// makes the same decision, and threads that already exist are skipped.
/// Workflow errors are counted and logged without failing the batch.
pub struct SentimentBridge {
    service: Arc<ReviewService>,
    topic: String,
    sample_rate: f64,
    parallelism: usize,
    totals: BridgeStats,
}

impl SentimentBridge {
    pub fn new(service: Arc<ReviewService>, topic: impl Into<String>, sample_rate: f64) -> Self {
        Self {
            service,
            topic: topic.into(),
            sample_rate: sample_rate.clamp(0.0, 1.0),
            parallelism: 1,
            totals: BridgeStats::default(),
        }
    }

    /// Runs up to `n` workflow threads at once within a batch.
    pub fn parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn totals(&self) -> BridgeStats {
        self.totals
    }

    pub fn thread_id(r: &SourcedRecord) -> String {
        format!("{}/{}/{}", r.topic, r.partition, r.offset)
    }

    /// Uniform in `[0, 1)` from the top 53 bits of the thread id hash.
    fn sampled(&self, thread_id: &str) -> bool {
        let u = (hash64(thread_id.as_bytes()) >> 11) as f64 / (1u64 << 53) as f64;
        u < self.sample_rate
    }

    fn handle(&self, records: &[&SourcedRecord]) -> BridgeStats {
        let mut st = BridgeStats::default();
        for r in records {
            let thread_id = Self::thread_id(r);
            let Some(text) = r.record.object.get(REVIEW_TEXT_KEY).filter(|t| !t.trim().is_empty()) else {
                st.missing_text += 1;
                continue;
            };
            match self.service.checkpointer().latest(&thread_id) {
                Ok(Some(_)) => {
                    st.already_processed += 1;
                    continue;
                }
                Ok(None) => {}
                Err(e) => {
                    tracing::warn!(error = %e, thread_id, "cannot read thread history");
                    st.failed += 1;
                    continue;
                }
            }
            match self.service.submit(&thread_id, text) {
                Ok(Outcome::Finished(_)) => st.finished += 1,
                Ok(Outcome::Interrupted { .. }) => st.interrupted += 1,
                Err(e) => {
                    tracing::warn!(error = %e, thread_id, "sentiment workflow failed");
                    st.failed += 1;
                }
            }
        }
        st
    }
}

impl Operator for SentimentBridge {
    fn name(&self) -> &str {
        "sentiment_bridge"
    }

    fn process(&mut self, batch: &Batch, _state: &mut KeyedState) -> Result<Vec<Value>, EngineError> {
        let mut stats = BridgeStats::default();
        let mut picked = Vec::new();
        for r in batch.records.iter().filter(|r| r.topic == self.topic) {
            stats.seen += 1;
            if self.sampled(&Self::thread_id(r)) {
                stats.sampled += 1;
                picked.push(r);
            }
        }
        if self.parallelism <= 1 || picked.len() < 2 {
            stats.add(&self.handle(&picked));
        } else {
            let chunk = picked.len().div_ceil(self.parallelism);
            let this = &*self;
            let parts: Vec<BridgeStats> = std::thread::scope(|s| {
                let handles: Vec<_> = picked.chunks(chunk).map(|c| s.spawn(move || this.handle(c))).collect();
                handles.into_iter().map(|h| h.join().expect("bridge worker panicked")).collect()
            });
            for p in &parts {
                stats.add(p);
            }
        }
        self.totals.add(&stats);
        Ok(vec![serde_json::to_value(stats).expect("serializable")])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::test_support::{batch_of, record_with_ip};
    use crate::sentiment::{LexiconClassifier, ResultsLog, SentimentConfig, TicketStatus, TicketStore};
    use crate::workflow::MemoryCheckpointer;

    fn service() -> Arc<ReviewService> {
        let cfg = Arc::new(SentimentConfig::default());
        Arc::new(ReviewService::new(
            Arc::new(LexiconClassifier::new(&cfg)),
            cfg,
            Arc::new(MemoryCheckpointer::new()),
            Arc::new(TicketStore::in_memory()),
            Arc::new(ResultsLog::in_memory()),
        ))
    }

    fn batch(texts: &[&str]) -> Batch {
        let mut b = batch_of(1, texts.iter().map(|_| record_with_ip("1.2.3.4", 0)).collect());
        for (i, (r, t)) in b.records.iter_mut().zip(texts).enumerate() {
            r.topic = "events.comment".into();
            r.offset = i as u64;
            r.record.object.insert(REVIEW_TEXT_KEY.into(), t.to_string());
        }
        b
    }

    #[test]
    fn positive_records_finish_without_tickets() {
        let svc = service();
        let mut bridge = SentimentBridge::new(svc.clone(), "events.comment", 1.0);
        let texts = ["great food"; 10];
        bridge.process(&batch(&texts), &mut KeyedState::new()).unwrap();
        assert_eq!(bridge.totals().finished, 10);
        assert_eq!(svc.tickets().counts(), (0, 0));
        assert_eq!(svc.results().rows().unwrap().len(), 10);
        assert_eq!(svc.results().rows().unwrap()[3].thread_id, "events.comment/0/3");
    }

    #[test]
    fn negative_record_opens_ticket_and_stream_continues() {
        let svc = service();
        let mut bridge = SentimentBridge::new(svc.clone(), "events.comment", 1.0).parallelism(4);
        let b = batch(&["great food", "awful rude staff", "lovely", "", "nice"]);
        bridge.process(&b, &mut KeyedState::new()).unwrap();
        let t = bridge.totals();
        assert_eq!((t.finished, t.interrupted, t.missing_text), (3, 1, 1));
        let pending = svc.tickets().list(Some(TicketStatus::Pending));
        assert_eq!(pending.len(), 1);
        assert_eq!(pending[0].thread_id, "events.comment/0/1");
    }

    #[test]
    fn zero_rate_invokes_nothing() {
        let svc = service();
        let mut bridge = SentimentBridge::new(svc.clone(), "events.comment", 0.0);
        bridge.process(&batch(&["great"; 20]), &mut KeyedState::new()).unwrap();
        assert_eq!(bridge.totals().sampled, 0);
        assert!(svc.checkpointer().thread_ids().unwrap().is_empty());
    }

    #[test]
    fn redelivery_is_idempotent() {
        let svc = service();
        let mut bridge = SentimentBridge::new(svc.clone(), "events.comment", 1.0);
        let b = batch(&["bad", "good"]);
        bridge.process(&b, &mut KeyedState::new()).unwrap();
        bridge.process(&b, &mut KeyedState::new()).unwrap();
        assert_eq!(bridge.totals().already_processed, 2);
        assert_eq!(svc.tickets().counts(), (1, 0));
    }

    #[test]
    fn other_topics_ignored_and_rate_is_roughly_honoured() {
        let svc = service();
        let mut bridge = SentimentBridge::new(svc, "events.comment", 0.25);
        let mut b = batch(&["good"; 2000]);
        b.records[0].topic = "events.browse".into();
        bridge.process(&b, &mut KeyedState::new()).unwrap();
        let t = bridge.totals();
        assert_eq!(t.seen, 1999);
        assert!((t.sampled as f64 / 1999.0 - 0.25).abs() < 0.04, "sampled {}", t.sampled);
    }
}
