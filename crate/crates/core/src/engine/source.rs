use std::collections::BTreeMap;
use std::sync::Arc;

use super::EngineError;
use crate::queue::{Broker, Message};

/// Where batches come from. `fetch` must be repeatable until `commit`.
pub trait BatchSource: Send {
    fn fetch(&mut self, max: usize) -> Result<Vec<Message>, EngineError>;
    /// Marks everything below `next_offsets[(topic, partition)]` as consumed.
    fn commit(&mut self, next_offsets: &BTreeMap<(String, u32), u64>) -> Result<(), EngineError>;
}

#[derive(Debug, Clone)]
pub enum TopicSelection {
    Fixed(Vec<String>),
    /// Every topic whose name starts with the prefix, re-listed on each fetch.
    Prefix(String),
}

/// Consumer-group reader over one or more broker topics.
pub struct QueueSource {
    broker: Arc<Broker>,
    group: String,
    topics: TopicSelection,
}

impl QueueSource {
    pub fn new(broker: Arc<Broker>, group: impl Into<String>, topics: TopicSelection) -> Self {
        Self {
            broker,
            group: group.into(),
            topics,
        }
    }

    fn topic_names(&self) -> Vec<String> {
        let existing = self.broker.topics();
        match &self.topics {
            TopicSelection::Fixed(names) => {
                let mut v: Vec<String> = names.iter().filter(|n| existing.contains(n)).cloned().collect();
                v.sort();
                v
            }
            TopicSelection::Prefix(prefix) => existing.into_iter().filter(|t| t.starts_with(prefix)).collect(),
        }
    }
}

impl BatchSource for QueueSource {
    fn fetch(&mut self, max: usize) -> Result<Vec<Message>, EngineError> {
        let mut out = Vec::new();
        for topic in self.topic_names() {
            if out.len() >= max {
                break;
            }
            out.extend(self.broker.poll(&self.group, &topic, max - out.len())?);
        }
        Ok(out)
    }

    fn commit(&mut self, next_offsets: &BTreeMap<(String, u32), u64>) -> Result<(), EngineError> {
        let mut per_topic: BTreeMap<&str, BTreeMap<u32, u64>> = BTreeMap::new();
        for ((topic, partition), offset) in next_offsets {
            per_topic.entry(topic).or_default().insert(*partition, *offset);
        }
        for (topic, offsets) in per_topic {
            self.broker.commit(&self.group, topic, &offsets)?;
        }
        Ok(())
    }
}
