//! Embedded topic log: partitioned append-only segments on disk plus
//! committed offsets per consumer group.
//!
//! Layout under the data directory:
//!
//! ```text
//! <data_dir>/<topic>/<partition>.seg     frames, see below
//! <data_dir>/<topic>/<group>.offsets     "partition next_offset" per line
//! ```
//!
//! A frame is `u32 LE frame_len | u32 LE key_len | key | payload | u64 LE enqueue_ts`
//! where `frame_len` counts every byte after itself and `key_len` is
//! `0xFFFF_FFFF` for a keyless message.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::cardinality::hash64;

pub const DEFAULT_PARTITIONS: u32 = 4;
const NO_KEY: u32 = u32::MAX;
const FRAME_OVERHEAD: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("offset {offset} for {topic}/{partition} is beyond end offset {end}")]
    OffsetOutOfRange {
        topic: String,
        partition: u32,
        offset: u64,
        end: u64,
    },
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("corrupt offsets file {0}")]
    CorruptOffsets(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
    pub key: Option<Vec<u8>>,
    pub payload: Vec<u8>,
    pub enqueue_ts: u64,
}

/// Committed read positions of one group on one topic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConsumerGroup {
    pub group_id: String,
    pub topic: String,
    /// partition -> next offset to read
    pub committed: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub data_dir: PathBuf,
    pub default_partitions: u32,
    pub partitions_per_topic: HashMap<String, u32>,
    /// fsync every append and offset commit.
    pub sync_writes: bool,
}

impl BrokerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            default_partitions: DEFAULT_PARTITIONS,
            partitions_per_topic: HashMap::new(),
            sync_writes: false,
        }
    }

    pub fn partitions(mut self, n: u32) -> Self {
        self.default_partitions = n.max(1);
        self
    }

    pub fn topic_partitions(mut self, topic: impl Into<String>, n: u32) -> Self {
        self.partitions_per_topic.insert(topic.into(), n.max(1));
        self
    }
}

struct Partition {
    file: File,
    /// (byte position of frame start, frame length including the length prefix)
    index: Vec<(u64, u32)>,
    end_pos: u64,
}

impl Partition {
    fn open(path: &Path) -> io::Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let len = file.metadata()?.len();
        let mut index = Vec::new();
        let mut pos = 0u64;
        let mut header = [0u8; 8];
        file.seek(SeekFrom::Start(0))?;
        let mut reader = io::BufReader::new(&mut file);
        while pos + 4 <= len {
            if reader.read_exact(&mut header[..4]).is_err() {
                break;
            }
            let frame_len = u32::from_le_bytes(header[..4].try_into().unwrap()) as u64;
            if frame_len < (FRAME_OVERHEAD - 4) as u64 || pos + 4 + frame_len > len {
                break;
            }
            reader.seek_relative(frame_len as i64)?;
            index.push((pos, (4 + frame_len) as u32));
            pos += 4 + frame_len;
        }
        drop(reader);
        if pos != len {
            // Torn tail from an interrupted append.
            file.set_len(pos)?;
        }
        Ok(Self {
            file,
            index,
            end_pos: pos,
        })
    }

    fn append(&mut self, frame: &[u8], sync: bool) -> io::Result<u64> {
        let result = (|| {
            self.file.seek(SeekFrom::Start(self.end_pos))?;
            self.file.write_all(frame)?;
            if sync {
                self.file.sync_data()?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            let _ = self.file.set_len(self.end_pos);
            return Err(e);
        }
        let offset = self.index.len() as u64;
        self.index.push((self.end_pos, frame.len() as u32));
        self.end_pos += frame.len() as u64;
        Ok(offset)
    }

    fn read(&mut self, offset: u64) -> io::Result<(Option<Vec<u8>>, Vec<u8>, u64)> {
        let (pos, len) = self.index[offset as usize];
        let mut buf = vec![0u8; len as usize];
        self.file.seek(SeekFrom::Start(pos))?;
        self.file.read_exact(&mut buf)?;
        decode_frame(&buf).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "malformed frame"))
    }

    fn end_offset(&self) -> u64 {
        self.index.len() as u64
    }
}

pub(crate) fn encode_frame(key: Option<&[u8]>, payload: &[u8], enqueue_ts: u64) -> Vec<u8> {
    let key_len = key.map_or(0, <[u8]>::len);
    let frame_len = 4 + key_len + payload.len() + 8;
    let mut out = Vec::with_capacity(4 + frame_len);
    out.extend_from_slice(&(frame_len as u32).to_le_bytes());
    out.extend_from_slice(&key.map_or(NO_KEY, |k| k.len() as u32).to_le_bytes());
    if let Some(k) = key {
        out.extend_from_slice(k);
    }
    out.extend_from_slice(payload);
    out.extend_from_slice(&enqueue_ts.to_le_bytes());
    out
}

pub(crate) fn decode_frame(frame: &[u8]) -> Option<(Option<Vec<u8>>, Vec<u8>, u64)> {
    let frame_len = u32::from_le_bytes(frame.get(..4)?.try_into().ok()?) as usize;
    if frame.len() != 4 + frame_len || frame_len < FRAME_OVERHEAD - 4 {
        return None;
    }
    let key_len = u32::from_le_bytes(frame[4..8].try_into().ok()?);
    let body = &frame[8..frame.len() - 8];
    let (key, payload) = if key_len == NO_KEY {
        (None, body)
    } else {
        let k = key_len as usize;
        if k > body.len() {
            return None;
        }
        (Some(body[..k].to_vec()), &body[k..])
    };
    let ts = u64::from_le_bytes(frame[frame.len() - 8..].try_into().ok()?);
    Some((key, payload.to_vec(), ts))
}

struct Topic {
    dir: PathBuf,
    partitions: Vec<Mutex<Partition>>,
    round_robin: AtomicU64,
}

type GroupKey = (String, String);

/// Single-process broker. Cheap to share behind an `Arc`.
pub struct Broker {
    config: BrokerConfig,
    topics: RwLock<HashMap<String, Arc<Topic>>>,
    groups: Mutex<HashMap<GroupKey, BTreeMap<u32, u64>>>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Broker {
    /// Opens (or creates) the data directory and loads every existing topic.
    pub fn open(config: BrokerConfig) -> Result<Self, QueueError> {
        fs::create_dir_all(&config.data_dir)?;
        let broker = Self {
            config,
            topics: RwLock::new(HashMap::new()),
            groups: Mutex::new(HashMap::new()),
        };
        for entry in fs::read_dir(&broker.config.data_dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
                continue;
            };
            if valid_name(&name) {
                let topic = broker.load_topic(&name, None)?;
                broker.topics.write().unwrap().insert(name, topic);
            }
        }
        Ok(broker)
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    fn load_topic(&self, name: &str, create_with: Option<u32>) -> Result<Arc<Topic>, QueueError> {
        let dir = self.config.data_dir.join(name);
        fs::create_dir_all(&dir)?;
        let mut existing = 0u32;
        while dir.join(format!("{existing}.seg")).exists() {
            existing += 1;
        }
        let count = if existing > 0 { existing } else { create_with.unwrap_or(0) };
        let partitions = (0..count)
            .map(|p| Partition::open(&dir.join(format!("{p}.seg"))).map(Mutex::new))
            .collect::<io::Result<Vec<_>>>()?;
        Ok(Arc::new(Topic {
            dir,
            partitions,
            round_robin: AtomicU64::new(0),
        }))
    }

    fn topic(&self, name: &str) -> Result<Arc<Topic>, QueueError> {
        self.topics
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| QueueError::UnknownTopic(name.to_owned()))
    }

    fn topic_or_create(&self, name: &str) -> Result<Arc<Topic>, QueueError> {
        if let Ok(t) = self.topic(name) {
            return Ok(t);
        }
        if !valid_name(name) {
            return Err(QueueError::InvalidName(name.to_owned()));
        }
        let mut topics = self.topics.write().unwrap();
        if let Some(t) = topics.get(name) {
            return Ok(t.clone());
        }
        let n = self
            .config
            .partitions_per_topic
            .get(name)
            .copied()
            .unwrap_or(self.config.default_partitions);
        let topic = self.load_topic(name, Some(n))?;
        topics.insert(name.to_owned(), topic.clone());
        Ok(topic)
    }

    pub fn topics(&self) -> Vec<String> {
        let mut names: Vec<String> = self.topics.read().unwrap().keys().cloned().collect();
        names.sort();
        names
    }

    pub fn partition_count(&self, topic: &str) -> Result<u32, QueueError> {
        Ok(self.topic(topic)?.partitions.len() as u32)
    }

    pub fn end_offsets(&self, topic: &str) -> Result<Vec<u64>, QueueError> {
        let t = self.topic(topic)?;
        Ok(t.partitions.iter().map(|p| p.lock().unwrap().end_offset()).collect())
    }

    /// Appends a message. Keyed messages go to `hash(key) mod partitions`,
    /// keyless ones round-robin.
    pub fn publish(&self, topic: &str, key: Option<&[u8]>, payload: &[u8]) -> Result<(u32, u64), QueueError> {
        let t = self.topic_or_create(topic)?;
        let n = t.partitions.len() as u64;
        let partition = match key {
            Some(k) => hash64(k) % n,
            None => t.round_robin.fetch_add(1, Ordering::Relaxed) % n,
        } as u32;
        let frame = encode_frame(key, payload, now_ms());
        let offset = t.partitions[partition as usize]
            .lock()
            .unwrap()
            .append(&frame, self.config.sync_writes)?;
        Ok((partition, offset))
    }

    /// Committed positions for `group` on `topic`; unknown groups start at 0.
    pub fn consumer_group(&self, group: &str, topic: &str) -> Result<ConsumerGroup, QueueError> {
        let t = self.topic(topic)?;
        let committed = self.committed_offsets(group, topic, &t)?;
        Ok(ConsumerGroup {
            group_id: group.to_owned(),
            topic: topic.to_owned(),
            committed,
        })
    }

    fn committed_offsets(&self, group: &str, topic: &str, t: &Topic) -> Result<BTreeMap<u32, u64>, QueueError> {
        if !valid_name(group) {
            return Err(QueueError::InvalidName(group.to_owned()));
        }
        let key = (group.to_owned(), topic.to_owned());
        if let Some(c) = self.groups.lock().unwrap().get(&key) {
            return Ok(c.clone());
        }
        let path = t.dir.join(format!("{group}.offsets"));
        let mut committed: BTreeMap<u32, u64> = (0..t.partitions.len() as u32).map(|p| (p, 0)).collect();
        match fs::read_to_string(&path) {
            Ok(text) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let mut it = line.split_whitespace();
                    let parsed = match (it.next(), it.next(), it.next()) {
                        (Some(p), Some(o), None) => p.parse::<u32>().ok().zip(o.parse::<u64>().ok()),
                        _ => None,
                    };
                    let (p, o) = parsed.ok_or_else(|| QueueError::CorruptOffsets(path.clone()))?;
                    committed.insert(p, o);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        self.groups.lock().unwrap().insert(key, committed.clone());
        Ok(committed)
    }

    /// Up to `max` messages at or after the committed offsets. Partitions are
    /// visited round-robin one message at a time; within a partition offsets
    /// ascend. Committed offsets are not moved.
    pub fn poll(&self, group: &str, topic: &str, max: usize) -> Result<Vec<Message>, QueueError> {
        let t = self.topic(topic)?;
        let committed = self.committed_offsets(group, topic, &t)?;
        let mut locked: Vec<_> = t.partitions.iter().map(|p| p.lock().unwrap()).collect();
        let mut cursor: Vec<u64> = (0..locked.len() as u32)
            .map(|p| committed.get(&p).copied().unwrap_or(0))
            .collect();
        let mut out = Vec::new();
        while out.len() < max {
            let mut progressed = false;
            for (p, part) in locked.iter_mut().enumerate() {
                if out.len() >= max {
                    break;
                }
                if cursor[p] < part.end_offset() {
                    let (key, payload, enqueue_ts) = part.read(cursor[p])?;
                    out.push(Message {
                        topic: topic.to_owned(),
                        partition: p as u32,
                        offset: cursor[p],
                        key,
                        payload,
                        enqueue_ts,
                    });
                    cursor[p] += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        Ok(out)
    }

    /// Durably records next-offset-to-read per partition for `group`.
    pub fn commit(&self, group: &str, topic: &str, offsets: &BTreeMap<u32, u64>) -> Result<(), QueueError> {
        let t = self.topic(topic)?;
        let mut committed = self.committed_offsets(group, topic, &t)?;
        for (&p, &o) in offsets {
            let end = t
                .partitions
                .get(p as usize)
                .map(|part| part.lock().unwrap().end_offset())
                .unwrap_or(0);
            if p as usize >= t.partitions.len() || o > end {
                return Err(QueueError::OffsetOutOfRange {
                    topic: topic.to_owned(),
                    partition: p,
                    offset: o,
                    end,
                });
            }
        }
        committed.extend(offsets);
        let mut text = String::new();
        for (p, o) in &committed {
            text.push_str(&format!("{p} {o}\n"));
        }
        let path = t.dir.join(format!("{group}.offsets"));
        crate::fsutil::write_atomic(&path, text.as_bytes(), self.config.sync_writes)?;
        self.groups
            .lock()
            .unwrap()
            .insert((group.to_owned(), topic.to_owned()), committed);
        Ok(())
    }
}
