use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pipeline::keys;
use super::{Label, SentimentResult};
use crate::workflow::{InterruptHook, WorkflowState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TicketStatus {
    Pending,
    Resolved,
}

impl std::str::FromStr for TicketStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pending" => Ok(TicketStatus::Pending),
            "resolved" => Ok(TicketStatus::Resolved),
            other => Err(format!("unknown ticket status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment_override: Option<Label>,
    pub response: String,
    pub reviewer: String,
    pub resolved_ts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTicket {
    pub ticket_id: String,
    pub thread_id: String,
    pub query: String,
    pub category: String,
    pub machine: SentimentResult,
    pub created_ts: u64,
    pub status: TicketStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TicketError {
    #[error("unknown ticket {0}")]
    NotFound(String),
    #[error("ticket {0} is already resolved")]
    AlreadyResolved(String),
    #[error("ticket {0} is being resolved by another reviewer")]
    InProgress(String),
    #[error("a resolution needs a non-empty response")]
    EmptyResponse,
    #[error("ticket storage: {0}")]
    Storage(String),
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Default)]
struct Inner {
    tickets: BTreeMap<String, ReviewTicket>,
    claimed: HashSet<String>,
    next_seq: u64,
    log: Option<File>,
}

/// Review tickets, in memory or backed by an append-only NDJSON file where
/// the last line for a ticket id wins on reload.
///
/// Resolution is two-phase: [`claim`](Self::claim) reserves a pending
/// ticket for one caller, then [`complete`](Self::complete) or
/// [`release`](Self::release). A second claimant gets `InProgress` or
/// `AlreadyResolved`, so the first resolve wins.
#[derive(Default)]
pub struct TicketStore {
    inner: Mutex<Inner>,
}

impl TicketStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, TicketError> {
        let path = path.as_ref();
        let storage = |e: std::io::Error| TicketError::Storage(format!("{}: {e}", path.display()));
        let mut inner = Inner::default();
        if path.exists() {
            for line in BufReader::new(File::open(path).map_err(storage)?).lines() {
                let line = line.map_err(storage)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ReviewTicket>(&line) {
                    Ok(t) => {
                        if let Some(seq) = t.ticket_id.strip_prefix('T').and_then(|n| n.parse::<u64>().ok()) {
                            inner.next_seq = inner.next_seq.max(seq);
                        }
                        inner.tickets.insert(t.ticket_id.clone(), t);
                    }
                    // A torn final line from a crash; earlier lines are intact.
                    Err(e) => tracing::warn!(error = %e, "skipping unreadable ticket line"),
                }
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(storage)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(storage)?;
        // Start on a fresh line if the previous writer died mid-line.
        if std::fs::read(path).map_err(storage)?.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n").map_err(storage)?;
        }
        inner.log = Some(file);
        Ok(Self { inner: Mutex::new(inner) })
    }

    fn persist(inner: &mut Inner, ticket: &ReviewTicket) -> Result<(), TicketError> {
        if let Some(f) = inner.log.as_mut() {
            let mut line = serde_json::to_vec(ticket).map_err(|e| TicketError::Storage(e.to_string()))?;
            line.push(b'\n');
            f.write_all(&line)
                .and_then(|_| f.sync_data())
                .map_err(|e| TicketError::Storage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn create(
        &self,
        thread_id: &str,
        query: &str,
        category: &str,
        machine: SentimentResult,
    ) -> Result<ReviewTicket, TicketError> {
        let mut inner = self.inner.lock().unwrap();
        inner.next_seq += 1;
        let ticket = ReviewTicket {
            ticket_id: format!("T{:06}", inner.next_seq),
            thread_id: thread_id.to_owned(),
            query: query.to_owned(),
            category: category.to_owned(),
            machine,
            created_ts: now_ms(),
            status: TicketStatus::Pending,
            resolution: None,
        };
        Self::persist(&mut inner, &ticket)?;
        inner.tickets.insert(ticket.ticket_id.clone(), ticket.clone());
        Ok(ticket)
    }

    pub fn get(&self, ticket_id: &str) -> Option<ReviewTicket> {
        self.inner.lock().unwrap().tickets.get(ticket_id).cloned()
    }

    /// Newest first.
    pub fn list(&self, status: Option<TicketStatus>) -> Vec<ReviewTicket> {
        let inner = self.inner.lock().unwrap();
        let mut out: Vec<ReviewTicket> = inner
            .tickets
            .values()
            .filter(|t| status.map_or(true, |s| t.status == s))
            .cloned()
            .collect();
        out.sort_by(|a, b| b.created_ts.cmp(&a.created_ts).then_with(|| b.ticket_id.cmp(&a.ticket_id)));
        out
    }

    pub fn claim(&self, ticket_id: &str) -> Result<ReviewTicket, TicketError> {
        let mut inner = self.inner.lock().unwrap();
        let ticket = inner
            .tickets
            .get(ticket_id)
            .cloned()
            .ok_or_else(|| TicketError::NotFound(ticket_id.to_owned()))?;
        if ticket.status == TicketStatus::Resolved {
            return Err(TicketError::AlreadyResolved(ticket_id.to_owned()));
        }
        if !inner.claimed.insert(ticket_id.to_owned()) {
            return Err(TicketError::InProgress(ticket_id.to_owned()));
        }
        Ok(ticket)
    }

    pub fn release(&self, ticket_id: &str) {
        self.inner.lock().unwrap().claimed.remove(ticket_id);
    }

    /// Marks a claimed ticket resolved.
    pub fn complete(&self, ticket_id: &str, resolution: Resolution) -> Result<ReviewTicket, TicketError> {
        if resolution.response.trim().is_empty() {
            return Err(TicketError::EmptyResponse);
        }
        let mut inner = self.inner.lock().unwrap();
        let mut ticket = inner
            .tickets
            .get(ticket_id)
            .cloned()
            .ok_or_else(|| TicketError::NotFound(ticket_id.to_owned()))?;
        if ticket.status == TicketStatus::Resolved {
            return Err(TicketError::AlreadyResolved(ticket_id.to_owned()));
        }
        ticket.status = TicketStatus::Resolved;
        ticket.resolution = Some(resolution);
        Self::persist(&mut inner, &ticket)?;
        inner.tickets.insert(ticket_id.to_owned(), ticket.clone());
        inner.claimed.remove(ticket_id);
        Ok(ticket)
    }

    /// `(pending, resolved)`.
    pub fn counts(&self) -> (usize, usize) {
        let inner = self.inner.lock().unwrap();
        let pending = inner.tickets.values().filter(|t| t.status == TicketStatus::Pending).count();
        (pending, inner.tickets.len() - pending)
    }
}

/// Opens a ticket whenever a sentiment thread pauses for review.
pub struct TicketHook {
    store: Arc<TicketStore>,
}

impl TicketHook {
    pub fn new(store: Arc<TicketStore>) -> Self {
        Self { store }
    }
}

impl InterruptHook for TicketHook {
    fn on_interrupt(&self, thread_id: &str, _node: &str, state: &WorkflowState) -> Result<String, String> {
        let label = state
            .get_str(keys::SENTIMENT)
            .unwrap_or("neutral")
            .parse::<Label>()?;
        let machine = SentimentResult {
            label,
            confidence: state.get_f64(keys::CONFIDENCE).unwrap_or(0.0),
            classifier_id: state.get_str(keys::CLASSIFIER_ID).unwrap_or_default().to_owned(),
        };
        self.store
            .create(
                thread_id,
                state.get_str(keys::QUERY).unwrap_or_default(),
                state.get_str(keys::CATEGORY).unwrap_or_default(),
                machine,
            )
            .map(|t| t.ticket_id)
            .map_err(|e| e.to_string())
    }
}
