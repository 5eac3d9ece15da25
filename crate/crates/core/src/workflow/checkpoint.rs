use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{Snapshot, WorkflowError};

/// Per-thread single-writer guard shared by every graph using one checkpointer.
#[derive(Debug, Default)]
pub struct ThreadLocks(Mutex<HashSet<String>>);

impl ThreadLocks {
    /// Returns false if the thread is already held.
    pub fn try_acquire(&self, thread_id: &str) -> bool {
        self.0.lock().unwrap().insert(thread_id.to_owned())
    }

    pub fn release(&self, thread_id: &str) {
        self.0.lock().unwrap().remove(thread_id);
    }
}

/// Append-only snapshot storage keyed by thread id.
pub trait Checkpointer: Send + Sync {
    /// Appends a snapshot. `snapshot.step` must exceed the thread's last step.
    fn append(&self, thread_id: &str, snapshot: &Snapshot) -> Result<(), WorkflowError>;

    /// Full history, or `None` for a thread never written.
    fn history(&self, thread_id: &str) -> Result<Option<Vec<Snapshot>>, WorkflowError>;

    fn latest(&self, thread_id: &str) -> Result<Option<Snapshot>, WorkflowError> {
        Ok(self.history(thread_id)?.and_then(|mut h| h.pop()))
    }

    fn thread_ids(&self) -> Result<Vec<String>, WorkflowError>;

    fn locks(&self) -> &ThreadLocks;
}

fn check_order(thread_id: &str, last: Option<u64>, next: u64) -> Result<(), WorkflowError> {
    match last {
        Some(prev) if next <= prev => Err(WorkflowError::CheckpointFailure(format!(
            "thread {thread_id}: step {next} does not follow {prev}"
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Default)]
pub struct MemoryCheckpointer {
    threads: Mutex<HashMap<String, Vec<Snapshot>>>,
    locks: ThreadLocks,
}

impl MemoryCheckpointer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Checkpointer for MemoryCheckpointer {
    fn append(&self, thread_id: &str, snapshot: &Snapshot) -> Result<(), WorkflowError> {
        let mut threads = self.threads.lock().unwrap();
        let list = threads.entry(thread_id.to_owned()).or_default();
        check_order(thread_id, list.last().map(|s| s.step), snapshot.step)?;
        list.push(snapshot.clone());
        Ok(())
    }

    fn history(&self, thread_id: &str) -> Result<Option<Vec<Snapshot>>, WorkflowError> {
        Ok(self.threads.lock().unwrap().get(thread_id).cloned())
    }

    fn thread_ids(&self) -> Result<Vec<String>, WorkflowError> {
        let mut ids: Vec<String> = self.threads.lock().unwrap().keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }

    fn locks(&self) -> &ThreadLocks {
        &self.locks
    }
}

/// One NDJSON file per thread under `<dir>/threads/`. Thread ids are
/// percent-encoded into file names, so ids like `events.x/0/12` are fine.
#[derive(Debug)]
pub struct FileCheckpointer {
    dir: PathBuf,
    sync: bool,
    last_step: Mutex<HashMap<String, u64>>,
    locks: ThreadLocks,
}

impl FileCheckpointer {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, WorkflowError> {
        let dir = dir.as_ref().join("threads");
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            sync: true,
            last_step: Mutex::new(HashMap::new()),
            locks: ThreadLocks::default(),
        })
    }

    /// Disables fsync after each append.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn thread_path(&self, thread_id: &str) -> PathBuf {
        self.dir.join(format!("{}.ndjson", encode_id(thread_id)))
    }

    fn read(&self, path: &Path) -> Result<Option<Vec<Snapshot>>, WorkflowError> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            if !line.ends_with('\n') {
                // Torn final write from a crash; the snapshot never completed.
                break;
            }
            let snap: Snapshot = serde_json::from_str(line.trim_end())
                .map_err(|e| WorkflowError::CheckpointFailure(format!("{}: {e}", path.display())))?;
            out.push(snap);
        }
        Ok(Some(out))
    }
}

impl Checkpointer for FileCheckpointer {
    fn append(&self, thread_id: &str, snapshot: &Snapshot) -> Result<(), WorkflowError> {
        let path = self.thread_path(thread_id);
        let mut last = self.last_step.lock().unwrap();
        let prev = match last.get(thread_id) {
            Some(s) => Some(*s),
            None => {
                truncate_torn_tail(&path)?;
                self.read(&path)?.and_then(|h| h.last().map(|s| s.step))
            }
        };
        check_order(thread_id, prev, snapshot.step)?;
        let mut line = serde_json::to_vec(snapshot).map_err(|e| WorkflowError::CheckpointFailure(e.to_string()))?;
        line.push(b'\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        file.write_all(&line)?;
        if self.sync {
            file.sync_data()?;
        }
        last.insert(thread_id.to_owned(), snapshot.step);
        Ok(())
    }

    fn history(&self, thread_id: &str) -> Result<Option<Vec<Snapshot>>, WorkflowError> {
        self.read(&self.thread_path(thread_id))
    }

    fn thread_ids(&self) -> Result<Vec<String>, WorkflowError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".ndjson")) {
                if let Some(id) = decode_id(stem) {
                    ids.push(id);
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn locks(&self) -> &ThreadLocks {
        &self.locks
    }
}

fn truncate_torn_tail(path: &Path) -> std::io::Result<()> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

fn encode_id(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    // Keep "." and ".." from naming directories.
    if out.chars().all(|c| c == '.') {
        out = out.replace('.', "%2E");
    }
    out
}

fn decode_id(name: &str) -> Option<String> {
    let bytes = name.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = name.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}
