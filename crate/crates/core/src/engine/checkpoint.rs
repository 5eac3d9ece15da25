//! Durable snapshots of [`KeyedState`].
//!
//! File layout: `<dir>/ckpt-<batch_id>.bin` and `<dir>/LATEST` holding the
//! last durable batch id. Snapshot encoding:
//!
//! ```text
//! "RVBDCKPT" | version u16 | batch_id u64 | entry_count u64 | body_hash u64
//! entry*: key_len u16 | key | blob_len u32 | blob
//! ```
//!
//! All integers little-endian; `body_hash` is the 64-bit hash of the entry
//! bytes. Source offsets are stored as entries under the reserved `@source/`
//! prefix.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::{EngineError, KeyedState};
use crate::cardinality::hash64;
use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 8] = b"RVBDCKPT";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 8 + 2 + 8 + 8 + 8;
const SOURCE_PREFIX: &str = "@source/";

/// Where the engine persists state at batch boundaries.
pub trait CheckpointStore: Send {
    /// Persists `state` as the snapshot for `state.last_batch_id()`; returns its size in bytes.
    fn write(&mut self, state: &KeyedState) -> Result<u64, EngineError>;
    /// The last durably completed snapshot, if any.
    fn restore(&self) -> Result<Option<KeyedState>, EngineError>;
}

pub fn encode(state: &KeyedState) -> Vec<u8> {
    let mut body = Vec::with_capacity(state.payload_bytes() + 6 * state.len() + 64);
    let mut count = 0u64;
    let mut put = |key: &str, blob: &[u8]| {
        body.extend_from_slice(&(key.len() as u16).to_le_bytes());
        body.extend_from_slice(key.as_bytes());
        body.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        body.extend_from_slice(blob);
        count += 1;
    };
    for ((topic, partition), offset) in &state.source_offsets {
        put(&format!("{SOURCE_PREFIX}{topic}/{partition}"), &offset.to_le_bytes());
    }
    for (key, blob) in state.iter() {
        put(key, blob);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&state.last_batch_id.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&hash64(&body).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode(bytes: &[u8]) -> Result<KeyedState, String> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err("bad magic or short header".into());
    }
    let u64_at = |pos: usize| u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let batch_id = u64_at(10);
    let count = u64_at(18);
    let body = &bytes[HEADER_LEN..];
    if hash64(body) != u64_at(26) {
        return Err("integrity hash mismatch".into());
    }
    let mut state = KeyedState {
        last_batch_id: batch_id,
        ..KeyedState::default()
    };
    let mut pos = 0usize;
    for _ in 0..count {
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], String> {
            let s = body.get(*pos..*pos + n).ok_or("truncated entry")?;
            *pos += n;
            Ok(s)
        };
        let klen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let key = std::str::from_utf8(take(&mut pos, klen)?).map_err(|_| "key is not UTF-8")?.to_owned();
        let blen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let blob = take(&mut pos, blen)?.to_vec();
        if let Some(src) = key.strip_prefix(SOURCE_PREFIX) {
            let (topic, partition) = src.rsplit_once('/').ok_or("malformed source key")?;
            let partition: u32 = partition.parse().map_err(|_| "malformed source partition")?;
            let offset = u64::from_le_bytes(blob.as_slice().try_into().map_err(|_| "malformed source offset")?);
            state.source_offsets.insert((topic.to_owned(), partition), offset);
        } else {
            state.put(key, blob);
        }
    }
    if pos != body.len() {
        return Err("trailing bytes after entries".into());
    }
    Ok(state)
}

/// Snapshot files in a directory, keeping the newest `retain` of them.
#[derive(Debug, Clone)]
pub struct CheckpointDir {
    dir: PathBuf,
    retain: usize,
    sync: bool,
}

impl CheckpointDir {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(EngineError::CheckpointWriteFailure)?;
        Ok(Self {
            dir,
            retain: 2,
            sync: false,
        })
    }

    pub fn retain(mut self, n: usize) -> Self {
        self.retain = n.max(1);
        self
    }

    pub fn sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot_path(&self, batch_id: u64) -> PathBuf {
        self.dir.join(format!("ckpt-{batch_id}.bin"))
    }

    pub fn latest_batch_id(&self) -> Result<Option<u64>, EngineError> {
        match fs::read_to_string(self.dir.join("LATEST")) {
            Ok(s) => s
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| EngineError::CorruptCheckpoint("LATEST is not a batch id".into())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(EngineError::CorruptCheckpoint(e.to_string())),
        }
    }
}

impl CheckpointStore for CheckpointDir {
    fn write(&mut self, state: &KeyedState) -> Result<u64, EngineError> {
        let bytes = encode(state);
        let id = state.last_batch_id;
        write_atomic(&self.snapshot_path(id), &bytes, self.sync).map_err(EngineError::CheckpointWriteFailure)?;
        write_atomic(&self.dir.join("LATEST"), format!("{id}\n").as_bytes(), self.sync)
            .map_err(EngineError::CheckpointWriteFailure)?;
        if id as usize > self.retain {
            let _ = fs::remove_file(self.snapshot_path(id - self.retain as u64));
        }
        Ok(bytes.len() as u64)
    }

    fn restore(&self) -> Result<Option<KeyedState>, EngineError> {
        let Some(id) = self.latest_batch_id()? else {
            return Ok(None);
        };
        let bytes = fs::read(self.snapshot_path(id)).map_err(|e| EngineError::CorruptCheckpoint(e.to_string()))?;
        let state = decode(&bytes).map_err(EngineError::CorruptCheckpoint)?;
        if state.last_batch_id != id {
            return Err(EngineError::CorruptCheckpoint(format!(
                "LATEST names batch {id} but snapshot holds batch {}",
                state.last_batch_id
            )));
        }
        Ok(Some(state))
    }
}
