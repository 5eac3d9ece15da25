//! Graph-based workflow runtime with per-thread checkpointing and
//! interrupt/resume for human input.
//!
//! A [`StateGraph`] is a set of named nodes over a shared key/value state.
//! Each node returns a delta that is merged last-writer-wins. After a node
//! runs, control follows either its one static edge or its router. Nodes in
//! the interrupt set pause the thread *before* they execute; a later
//! [`CompiledGraph::resume`] merges human input and runs the node.

mod checkpoint;
mod graph;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use checkpoint::{Checkpointer, FileCheckpointer, MemoryCheckpointer, ThreadLocks};
pub use graph::{CompileError, CompiledGraph, GraphViolation, InterruptHook, Outcome, StateGraph, DEFAULT_CYCLE_BUDGET};

/// Terminal sentinel for edges and routers.
pub const END: &str = "__end__";

/// Keys written by one node execution or supplied by a human.
pub type Delta = BTreeMap<String, Value>;

/// Builds a [`Delta`] from `(key, value)` pairs.
pub fn delta<I, K, V>(pairs: I) -> Delta
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<Value>,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

/// Shared state handed to every node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkflowState(BTreeMap<String, Value>);

impl WorkflowState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key).filter(|v| !v.is_null())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(Value::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(Value::as_f64)
    }

    pub fn get_bool(&self, key: &str) -> Option<bool> {
        self.get(key).and_then(Value::as_bool)
    }

    pub fn merge(&mut self, delta: &Delta) {
        for (k, v) in delta {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn as_map(&self) -> &BTreeMap<String, Value> {
        &self.0
    }
}

impl From<Delta> for WorkflowState {
    fn from(d: Delta) -> Self {
        WorkflowState(d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThreadStatus {
    Running,
    Interrupted { ticket_id: String },
    Finished,
}

impl ThreadStatus {
    pub fn label(&self) -> &'static str {
        match self {
            ThreadStatus::Running => "running",
            ThreadStatus::Interrupted { .. } => "interrupted",
            ThreadStatus::Finished => "finished",
        }
    }
}

/// One entry of a thread's history. For executed nodes `node` is the node
/// that just ran; for interrupted entries it is the node waiting to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub node: String,
    pub status: ThreadStatus,
    pub state: WorkflowState,
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("node {node} failed: {cause}")]
    NodeFailure { node: String, cause: String },
    #[error("cycle budget of {budget} node executions exceeded at step {step}")]
    CycleBudgetExceeded { budget: u32, step: u64 },
    #[error("thread {0} is not interrupted")]
    NotInterrupted(String),
    #[error("unknown thread {0}")]
    UnknownThread(String),
    #[error("thread {0} is already running")]
    ThreadBusy(String),
    #[error("thread {thread_id} is waiting on ticket {ticket_id}")]
    AwaitingHuman { thread_id: String, ticket_id: String },
    #[error("key {0:?} is not declared in the state schema")]
    UndeclaredKey(String),
    #[error("snapshot step {0} cannot be replayed")]
    NotReplayable(u64),
    #[error("interrupt hook failed: {0}")]
    InterruptHook(String),
    #[error("checkpointer failure: {0}")]
    CheckpointFailure(String),
}

impl From<std::io::Error> for WorkflowError {
    fn from(e: std::io::Error) -> Self {
        WorkflowError::CheckpointFailure(e.to_string())
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(&self.0).map_err(|_| fmt::Error)?)
    }
}
