use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::tickets::now_ms;
use super::{Classifier, ClassifierError, Label, Resolution, ReviewTicket, SentimentConfig, TicketError, TicketHook, TicketStore};
use crate::workflow::{
    delta, Checkpointer, CompiledGraph, Delta, Outcome, StateGraph, ThreadStatus, WorkflowError, WorkflowState, END,
};

/// State keys of the sentiment graph.
pub mod keys {
    pub const QUERY: &str = "query";
    pub const CATEGORY: &str = "category";
    pub const SENTIMENT: &str = "sentiment";
    pub const CONFIDENCE: &str = "confidence";
    pub const CLASSIFIER_ID: &str = "classifier_id";
    pub const RESPONSE: &str = "response";
    pub const ESCALATED: &str = "escalated";
    pub const REVIEWER: &str = "reviewer";
    pub const ERROR: &str = "error";

    pub const ALL: [&str; 9] = [QUERY, CATEGORY, SENTIMENT, CONFIDENCE, CLASSIFIER_ID, RESPONSE, ESCALATED, REVIEWER, ERROR];
}

pub const AUTO_RESPOND: &str = "auto_respond";
pub const HUMAN_REVIEW: &str = "human_review";

/// `human_review` for negative or low-confidence results, else `auto_respond`.
/// Missing or unreadable fields also go to review.
pub fn route(state: &WorkflowState, threshold: f64) -> &'static str {
    let label = state.get_str(keys::SENTIMENT).and_then(|s| s.parse::<Label>().ok());
    let confidence = state.get_f64(keys::CONFIDENCE);
    match (label, confidence) {
        (Some(Label::Negative), _) | (None, _) | (_, None) => HUMAN_REVIEW,
        (_, Some(c)) if c < threshold => HUMAN_REVIEW,
        _ => AUTO_RESPOND,
    }
}

/// categorize, analyze, then auto_respond or an interrupt before
/// human_review. Classifier failures do not fail the thread: they leave
/// confidence at zero so the record is escalated.
pub fn build_graph(classifier: Arc<dyn Classifier>, config: Arc<SentimentConfig>) -> CompiledGraph {
    use keys::*;
    let mut g = StateGraph::new(ALL);

    let (c, cfg) = (classifier.clone(), config.clone());
    g.add_node("categorize", &[CATEGORY, ERROR], move |s| {
        let query = s.get_str(QUERY).unwrap_or_default();
        match c.categorize(query, &cfg.category_names()) {
            Ok(cat) => Ok(delta([(CATEGORY, cat)])),
            Err(ClassifierError::EmptyInput) => Err("query is empty".into()),
            Err(e) => Ok(delta([(CATEGORY, cfg.fallback_category.clone()), (ERROR, e.to_string())])),
        }
    });

    let c = classifier.clone();
    g.add_node("analyze", &[SENTIMENT, CONFIDENCE, CLASSIFIER_ID, ERROR], move |s| {
        let query = s.get_str(QUERY).unwrap_or_default();
        match c.analyze(query) {
            Ok(r) => Ok(delta([
                (SENTIMENT, json!(r.label)),
                (CONFIDENCE, json!(r.confidence)),
                (CLASSIFIER_ID, json!(r.classifier_id)),
            ])),
            Err(ClassifierError::EmptyInput) => Err("query is empty".into()),
            Err(e) => Ok(delta([
                (SENTIMENT, json!(Label::Neutral)),
                (CONFIDENCE, json!(0.0)),
                (CLASSIFIER_ID, json!(c.id())),
                (ERROR, json!(e.to_string())),
            ])),
        }
    });

    let cfg = config.clone();
    g.add_node(AUTO_RESPOND, &[RESPONSE, ESCALATED], move |s| {
        let category = s.get_str(CATEGORY).unwrap_or_default();
        let label: Label = s.get_str(SENTIMENT).unwrap_or_default().parse()?;
        let text = cfg.template(category, label).map_err(|e| e.to_string())?;
        Ok(delta([(RESPONSE, json!(text)), (ESCALATED, json!(false))]))
    });

    g.add_node(HUMAN_REVIEW, &[ESCALATED], |s| {
        if s.get_str(RESPONSE).map_or(true, |r| r.trim().is_empty()) {
            return Err("human review needs a response".into());
        }
        Ok(delta([(ESCALATED, true)]))
    });

    let threshold = config.threshold;
    g.add_edge("categorize", "analyze")
        .add_conditional_edges("analyze", &[AUTO_RESPOND, HUMAN_REVIEW], move |s| route(s, threshold).to_owned())
        .add_edge(AUTO_RESPOND, END)
        .add_edge(HUMAN_REVIEW, END)
        .set_entry("categorize")
        .interrupt_before(HUMAN_REVIEW);
    g.compile().expect("sentiment graph is well formed")
}

/// One line of the results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub thread_id: String,
    pub category: String,
    pub sentiment: String,
    pub confidence: f64,
    pub response: String,
    pub escalated: bool,
}

impl ResultRow {
    pub fn from_state(thread_id: &str, s: &WorkflowState) -> Self {
        Self {
            thread_id: thread_id.to_owned(),
            category: s.get_str(keys::CATEGORY).unwrap_or_default().to_owned(),
            sentiment: s.get_str(keys::SENTIMENT).unwrap_or_default().to_owned(),
            confidence: s.get_f64(keys::CONFIDENCE).unwrap_or(0.0),
            response: s.get_str(keys::RESPONSE).unwrap_or_default().to_owned(),
            escalated: s.get_bool(keys::ESCALATED).unwrap_or(false),
        }
    }
}

/// Finished workflow results, kept in memory or appended to an NDJSON file.
pub struct ResultsLog {
    sink: Mutex<Sink>,
}

enum Sink {
    Memory(Vec<ResultRow>),
    File { path: PathBuf, file: File },
}

impl ResultsLog {
    pub fn in_memory() -> Self {
        Self {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            sink: Mutex::new(Sink::File { path, file }),
        })
    }

    pub fn append(&self, row: ResultRow) -> std::io::Result<()> {
        match &mut *self.sink.lock().unwrap() {
            Sink::Memory(rows) => rows.push(row),
            Sink::File { file, .. } => {
                let mut line = serde_json::to_vec(&row)?;
                line.push(b'\n');
                file.write_all(&line)?;
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> std::io::Result<Vec<ResultRow>> {
        match &*self.sink.lock().unwrap() {
            Sink::Memory(rows) => Ok(rows.clone()),
            Sink::File { path, .. } => {
                let mut out = Vec::new();
                for line in BufReader::new(File::open(path)?).lines() {
                    let line = line?;
                    if !line.trim().is_empty() {
                        out.push(serde_json::from_str(&line)?);
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveRequest {
    #[serde(default)]
    pub sentiment_override: Option<Label>,
    pub response: String,
    #[serde(default)]
    pub reviewer: String,
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error(transparent)]
    Ticket(#[from] TicketError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

/// Sentiment graph, thread checkpoints, ticket store and results log wired
/// together. Shared by the stream bridge and the review API.
pub struct ReviewService {
    graph: CompiledGraph,
    checkpointer: Arc<dyn Checkpointer>,
    tickets: Arc<TicketStore>,
    results: Arc<ResultsLog>,
}

impl ReviewService {
    pub fn new(
        classifier: Arc<dyn Classifier>,
        config: Arc<SentimentConfig>,
        checkpointer: Arc<dyn Checkpointer>,
        tickets: Arc<TicketStore>,
        results: Arc<ResultsLog>,
    ) -> Self {
        let graph = build_graph(classifier, config).with_interrupt_hook(Arc::new(TicketHook::new(tickets.clone())));
        Self {
            graph,
            checkpointer,
            tickets,
            results,
        }
    }

    pub fn graph(&self) -> &CompiledGraph {
        &self.graph
    }

    pub fn checkpointer(&self) -> &dyn Checkpointer {
        self.checkpointer.as_ref()
    }

    pub fn tickets(&self) -> &TicketStore {
        &self.tickets
    }

    pub fn results(&self) -> &ResultsLog {
        &self.results
    }

    /// Runs a new query on `thread_id`. Finished results go to the results
    /// log; interrupted ones have already opened a ticket.
    pub fn submit(&self, thread_id: &str, query: &str) -> Result<Outcome, WorkflowError> {
        let out = self.graph.invoke(delta([(keys::QUERY, query)]), thread_id, self.checkpointer())?;
        if let Outcome::Finished(state) = &out {
            self.log(thread_id, state);
        }
        Ok(out)
    }

    fn log(&self, thread_id: &str, state: &WorkflowState) {
        if let Err(e) = self.results.append(ResultRow::from_state(thread_id, state)) {
            tracing::error!(error = %e, thread_id, "cannot append to results log");
        }
    }

    /// Resumes the ticket's thread with the reviewer's input. The first
    /// resolve of a ticket wins; later ones get `AlreadyResolved`.
    pub fn resolve(&self, ticket_id: &str, req: ResolveRequest) -> Result<(ReviewTicket, WorkflowState), ResolveError> {
        let ticket = self.tickets.claim(ticket_id)?;
        match self.resume_claimed(&ticket, &req) {
            Ok(done) => Ok(done),
            Err(e) => {
                self.tickets.release(ticket_id);
                Err(e)
            }
        }
    }

    fn resume_claimed(&self, ticket: &ReviewTicket, req: &ResolveRequest) -> Result<(ReviewTicket, WorkflowState), ResolveError> {
        if req.response.trim().is_empty() {
            return Err(TicketError::EmptyResponse.into());
        }
        let reviewer = if req.reviewer.trim().is_empty() { "anonymous" } else { req.reviewer.trim() };
        let mut input: Delta = delta([(keys::RESPONSE, req.response.as_str()), (keys::REVIEWER, reviewer)]);
        if let Some(label) = req.sentiment_override {
            input.insert(keys::SENTIMENT.into(), json!(label));
        }
        let thread = ticket.thread_id.as_str();
        let state = match self.graph.resume(thread, input, self.checkpointer()) {
            Ok(Outcome::Finished(state)) => state,
            Ok(Outcome::Interrupted { node, .. }) => {
                return Err(WorkflowError::NodeFailure {
                    node,
                    cause: "thread paused again after review".into(),
                }
                .into())
            }
            // The thread finished but the ticket was never marked, e.g. a
            // crash between the two writes. Finish the ticket from history.
            Err(WorkflowError::NotInterrupted(_)) => match self.checkpointer.latest(thread)? {
                Some(s) if s.status == ThreadStatus::Finished => s.state,
                _ => return Err(WorkflowError::NotInterrupted(thread.to_owned()).into()),
            },
            Err(e) => return Err(e.into()),
        };
        let resolution = Resolution {
            sentiment_override: req.sentiment_override,
            response: state.get_str(keys::RESPONSE).unwrap_or(&req.response).to_owned(),
            reviewer: reviewer.to_owned(),
            resolved_ts: now_ms(),
        };
        let ticket = self.tickets.complete(&ticket.ticket_id, resolution)?;
        self.log(thread, &state);
        Ok((ticket, state))
    }
}

/// JSON view of a state for API responses.
pub(crate) fn state_json(state: &WorkflowState) -> Value {
    serde_json::to_value(state).expect("state is JSON")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sentiment::{LexiconClassifier, SentimentResult, TicketStatus};
    use crate::workflow::MemoryCheckpointer;

    fn service() -> ReviewService {
        let cfg = Arc::new(SentimentConfig::default());
        ReviewService::new(
            Arc::new(LexiconClassifier::new(&cfg)),
            cfg,
            Arc::new(MemoryCheckpointer::new()),
            Arc::new(TicketStore::in_memory()),
            Arc::new(ResultsLog::in_memory()),
        )
    }

    fn state(label: &str, confidence: f64) -> WorkflowState {
        delta([(keys::SENTIMENT, json!(label)), (keys::CONFIDENCE, json!(confidence))]).into()
    }

    #[test]
    fn routing_rules() {
        assert_eq!(route(&state("negative", 0.99), 0.6), HUMAN_REVIEW);
        assert_eq!(route(&state("positive", 0.3), 0.6), HUMAN_REVIEW);
        assert_eq!(route(&state("positive", 0.9), 0.6), AUTO_RESPOND);
        assert_eq!(route(&state("positive", 0.6), 0.6), AUTO_RESPOND);
        assert_eq!(route(&WorkflowState::new(), 0.6), HUMAN_REVIEW);
    }

    #[test]
    fn positive_review_auto_responds() {
        let svc = service();
        let out = svc.submit("t1", "great food, loved it").unwrap();
        let s = out.state();
        assert!(out.is_finished());
        assert_eq!(s.get_str(keys::CATEGORY), Some("food_quality"));
        assert_eq!(s.get_bool(keys::ESCALATED), Some(false));
        assert_eq!(s.get_str(keys::RESPONSE), Some(SentimentConfig::default().templates["food_quality/positive"].as_str()));
        let nodes: Vec<String> = svc.graph().state_history("t1", svc.checkpointer()).unwrap().into_iter().map(|s| s.node).collect();
        assert_eq!(nodes, ["categorize", "analyze", "auto_respond"]);
        assert_eq!(svc.results().rows().unwrap().len(), 1);
    }

    #[test]
    fn negative_review_waits_for_a_human() {
        let svc = service();
        let out = svc.submit("t2", "terrible, cold, rude staff").unwrap();
        let Outcome::Interrupted { ticket_id, .. } = out else { panic!("expected interrupt") };
        let ticket = svc.tickets().get(&ticket_id).unwrap();
        assert_eq!(ticket.thread_id, "t2");
        assert_eq!(ticket.machine.label, Label::Negative);
        assert!(svc.results().rows().unwrap().is_empty());

        let req = ResolveRequest {
            sentiment_override: Some(Label::Neutral),
            response: "We're sorry, a voucher is on its way.".into(),
            reviewer: "sam".into(),
        };
        let (ticket, state) = svc.resolve(&ticket_id, req.clone()).unwrap();
        assert_eq!(ticket.status, TicketStatus::Resolved);
        assert_eq!(state.get_str(keys::RESPONSE), Some(req.response.as_str()));
        assert_eq!(state.get_str(keys::SENTIMENT), Some("neutral"));
        assert_eq!(state.get_bool(keys::ESCALATED), Some(true));
        assert_eq!(state.get_str(keys::REVIEWER), Some("sam"));
        assert!(matches!(svc.resolve(&ticket_id, req), Err(ResolveError::Ticket(TicketError::AlreadyResolved(_)))));
        assert_eq!(svc.results().rows().unwrap().len(), 1);
    }

    #[test]
    fn empty_response_leaves_ticket_pending() {
        let svc = service();
        let Outcome::Interrupted { ticket_id, .. } = svc.submit("t", "awful").unwrap() else { panic!() };
        let req = ResolveRequest { sentiment_override: None, response: " ".into(), reviewer: String::new() };
        assert!(matches!(svc.resolve(&ticket_id, req), Err(ResolveError::Ticket(TicketError::EmptyResponse))));
        assert_eq!(svc.tickets().get(&ticket_id).unwrap().status, TicketStatus::Pending);
        let req = ResolveRequest { sentiment_override: None, response: "ok".into(), reviewer: String::new() };
        let (t, _) = svc.resolve(&ticket_id, req).unwrap();
        assert_eq!(t.resolution.unwrap().reviewer, "anonymous");
    }

    #[test]
    fn classifier_outage_escalates() {
        struct Down;
        impl Classifier for Down {
            fn id(&self) -> &str {
                "down"
            }
            fn categorize(&self, _: &str, _: &[String]) -> Result<String, ClassifierError> {
                Err(ClassifierError::ClassifierUnavailable("offline".into()))
            }
            fn analyze(&self, _: &str) -> Result<SentimentResult, ClassifierError> {
                Err(ClassifierError::MalformedVerdict("garbage".into()))
            }
        }
        let cfg = Arc::new(SentimentConfig::default());
        let graph = build_graph(Arc::new(Down), cfg);
        let out = graph.invoke(delta([(keys::QUERY, "great!")]), "t", &MemoryCheckpointer::new()).unwrap();
        assert!(matches!(out, Outcome::Interrupted { .. }));
        assert_eq!(out.state().get_f64(keys::CONFIDENCE), Some(0.0));
        assert_eq!(out.state().get_str(keys::CATEGORY), Some("general"));
        assert!(out.state().get_str(keys::ERROR).unwrap().contains("garbage"));
    }

    #[test]
    fn empty_query_is_node_failure() {
        let svc = service();
        assert!(matches!(svc.submit("t", "   "), Err(WorkflowError::NodeFailure { .. })));
    }

    #[test]
    fn unknown_category_without_template_fails() {
        struct Odd;
        impl Classifier for Odd {
            fn id(&self) -> &str {
                "odd"
            }
            fn categorize(&self, _: &str, _: &[String]) -> Result<String, ClassifierError> {
                Ok("parking".into())
            }
            fn analyze(&self, _: &str) -> Result<SentimentResult, ClassifierError> {
                Ok(SentimentResult { label: Label::Positive, confidence: 1.0, classifier_id: "odd".into() })
            }
        }
        let graph = build_graph(Arc::new(Odd), Arc::new(SentimentConfig::default()));
        let err = graph.invoke(delta([(keys::QUERY, "x")]), "t", &MemoryCheckpointer::new()).unwrap_err();
        assert!(matches!(err, WorkflowError::NodeFailure { node, cause } if node == AUTO_RESPOND && cause.contains("parking")));
    }
}
