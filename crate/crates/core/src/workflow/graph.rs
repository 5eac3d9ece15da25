use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use super::{Checkpointer, Delta, Snapshot, ThreadStatus, WorkflowError, WorkflowState, END};

/// Node executions allowed per `invoke`/`resume` call.
pub const DEFAULT_CYCLE_BUDGET: u32 = 25;

type Handler = Arc<dyn Fn(&WorkflowState) -> Result<Delta, String> + Send + Sync>;
type Router = Arc<dyn Fn(&WorkflowState) -> String + Send + Sync>;

/// Called when a thread pauses before an interrupt node. Returns the id of
/// the ticket that tracks the pending human input.
pub trait InterruptHook: Send + Sync {
    fn on_interrupt(&self, thread_id: &str, node: &str, state: &WorkflowState) -> Result<String, String>;
}

struct NodeDef {
    writes: BTreeSet<String>,
    handler: Handler,
}

struct RouterDef {
    targets: BTreeSet<String>,
    router: Router,
}

/// Graph under construction. Nothing is checked until [`StateGraph::compile`].
pub struct StateGraph {
    schema: BTreeSet<String>,
    nodes: BTreeMap<String, NodeDef>,
    duplicate_nodes: Vec<String>,
    edges: Vec<(String, String)>,
    routers: Vec<(String, RouterDef)>,
    entries: Vec<String>,
    interrupts: BTreeSet<String>,
    cycle_budget: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    NoEntry,
    MultipleEntries(Vec<String>),
    MissingNode(String),
    DanglingEdge { from: String },
    DualRouting(String),
    MultipleEdges(String),
    NoExit(String),
    DuplicateNode(String),
    UndeclaredWrite { node: String, key: String },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::NoEntry => write!(f, "no entry node"),
            GraphViolation::MultipleEntries(e) => write!(f, "multiple entry nodes: {}", e.join(", ")),
            GraphViolation::MissingNode(n) => write!(f, "missing node {n}"),
            GraphViolation::DanglingEdge { from } => write!(f, "edge from undefined node {from}"),
            GraphViolation::DualRouting(n) => write!(f, "node {n} has both a static edge and a router"),
            GraphViolation::MultipleEdges(n) => write!(f, "node {n} has more than one outgoing edge"),
            GraphViolation::NoExit(n) => write!(f, "node {n} has no outgoing edge"),
            GraphViolation::DuplicateNode(n) => write!(f, "node {n} defined twice"),
            GraphViolation::UndeclaredWrite { node, key } => write!(f, "node {node} writes undeclared key {key}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct CompileError {
    pub violations: Vec<GraphViolation>,
}

impl fmt::Display for CompileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

impl CompileError {
    /// Names of missing nodes referenced anywhere.
    pub fn missing_nodes(&self) -> Vec<&str> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                GraphViolation::MissingNode(n) => Some(n.as_str()),
                _ => None,
            })
            .collect()
    }
}

impl StateGraph {
    /// `schema` lists every key the state may hold.
    pub fn new<I, S>(schema: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            schema: schema.into_iter().map(Into::into).collect(),
            nodes: BTreeMap::new(),
            duplicate_nodes: Vec::new(),
            edges: Vec::new(),
            routers: Vec::new(),
            entries: Vec::new(),
            interrupts: BTreeSet::new(),
            cycle_budget: DEFAULT_CYCLE_BUDGET,
        }
    }

    /// Adds a node that may write only the keys in `writes`.
    pub fn add_node<F>(&mut self, name: &str, writes: &[&str], handler: F) -> &mut Self
    where
        F: Fn(&WorkflowState) -> Result<Delta, String> + Send + Sync + 'static,
    {
        let def = NodeDef {
            writes: writes.iter().map(|s| s.to_string()).collect(),
            handler: Arc::new(handler),
        };
        if self.nodes.insert(name.to_owned(), def).is_some() {
            self.duplicate_nodes.push(name.to_owned());
        }
        self
    }

    pub fn add_edge(&mut self, from: &str, to: &str) -> &mut Self {
        self.edges.push((from.to_owned(), to.to_owned()));
        self
    }

    /// Adds a router after `from`. It must return one of `targets`.
    pub fn add_conditional_edges<F>(&mut self, from: &str, targets: &[&str], router: F) -> &mut Self
    where
        F: Fn(&WorkflowState) -> String + Send + Sync + 'static,
    {
        let def = RouterDef {
            targets: targets.iter().map(|s| s.to_string()).collect(),
            router: Arc::new(router),
        };
        self.routers.push((from.to_owned(), def));
        self
    }

    pub fn set_entry(&mut self, node: &str) -> &mut Self {
        self.entries.push(node.to_owned());
        self
    }

    /// Threads pause before executing `node`.
    pub fn interrupt_before(&mut self, node: &str) -> &mut Self {
        self.interrupts.insert(node.to_owned());
        self
    }

    pub fn cycle_budget(&mut self, budget: u32) -> &mut Self {
        self.cycle_budget = budget;
        self
    }

    /// Validates the graph, reporting every violation found.
    pub fn compile(self) -> Result<CompiledGraph, CompileError> {
        let mut v = Vec::new();
        let known = |n: &str| self.nodes.contains_key(n);
        let mut missing = BTreeSet::new();
        let need = |n: &str, missing: &mut BTreeSet<String>| {
            if n != END && !known(n) {
                missing.insert(n.to_owned());
            }
        };

        v.extend(self.duplicate_nodes.iter().cloned().map(GraphViolation::DuplicateNode));
        match self.entries.as_slice() {
            [] => v.push(GraphViolation::NoEntry),
            [one] => {
                if !known(one) {
                    missing.insert(one.clone());
                }
            }
            many => v.push(GraphViolation::MultipleEntries(many.to_vec())),
        }

        let mut out_edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (from, to) in &self.edges {
            if !known(from) {
                v.push(GraphViolation::DanglingEdge { from: from.clone() });
            }
            need(to, &mut missing);
            out_edges.entry(from).or_default().push(to);
        }
        let mut out_routers: BTreeMap<&str, usize> = BTreeMap::new();
        for (from, def) in &self.routers {
            if !known(from) {
                v.push(GraphViolation::DanglingEdge { from: from.clone() });
            }
            for t in &def.targets {
                need(t, &mut missing);
            }
            *out_routers.entry(from).or_default() += 1;
        }
        for n in &self.interrupts {
            need(n, &mut missing);
        }
        v.extend(missing.into_iter().map(GraphViolation::MissingNode));

        for (name, def) in &self.nodes {
            let edges = out_edges.get(name.as_str()).map_or(0, Vec::len);
            let routers = out_routers.get(name.as_str()).copied().unwrap_or(0);
            if edges > 0 && routers > 0 {
                v.push(GraphViolation::DualRouting(name.clone()));
            } else if edges + routers > 1 {
                v.push(GraphViolation::MultipleEdges(name.clone()));
            } else if edges + routers == 0 {
                v.push(GraphViolation::NoExit(name.clone()));
            }
            for key in def.writes.difference(&self.schema) {
                v.push(GraphViolation::UndeclaredWrite {
                    node: name.clone(),
                    key: key.clone(),
                });
            }
        }

        if !v.is_empty() {
            return Err(CompileError { violations: v });
        }

        let mut next = BTreeMap::new();
        for (from, to) in self.edges {
            next.insert(from, Next::Static(to));
        }
        for (from, def) in self.routers {
            next.insert(from, Next::Routed(def));
        }
        Ok(CompiledGraph {
            entry: self.entries.into_iter().next().expect("checked above"),
            schema: self.schema,
            nodes: self.nodes,
            next,
            interrupts: self.interrupts,
            cycle_budget: self.cycle_budget,
            hook: None,
        })
    }
}

enum Next {
    Static(String),
    Routed(RouterDef),
}

pub enum Outcome {
    Finished(WorkflowState),
    Interrupted {
        ticket_id: String,
        node: String,
        state: WorkflowState,
    },
}

impl fmt::Debug for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Finished(s) => write!(f, "Finished({s})"),
            Outcome::Interrupted { ticket_id, node, state } => {
                write!(f, "Interrupted({ticket_id} before {node}, {state})")
            }
        }
    }
}

impl Outcome {
    pub fn state(&self) -> &WorkflowState {
        match self {
            Outcome::Finished(s) | Outcome::Interrupted { state: s, .. } => s,
        }
    }

    pub fn is_finished(&self) -> bool {
        matches!(self, Outcome::Finished(_))
    }
}

/// Validated, immutable graph. Cheap to share behind an `Arc`.
pub struct CompiledGraph {
    entry: String,
    schema: BTreeSet<String>,
    nodes: BTreeMap<String, NodeDef>,
    next: BTreeMap<String, Next>,
    interrupts: BTreeSet<String>,
    cycle_budget: u32,
    hook: Option<Arc<dyn InterruptHook>>,
}

struct Held<'a> {
    cp: &'a dyn Checkpointer,
    thread_id: &'a str,
}

impl Drop for Held<'_> {
    fn drop(&mut self) {
        self.cp.locks().release(self.thread_id);
    }
}

fn hold<'a>(cp: &'a dyn Checkpointer, thread_id: &'a str) -> Result<Held<'a>, WorkflowError> {
    if cp.locks().try_acquire(thread_id) {
        Ok(Held { cp, thread_id })
    } else {
        Err(WorkflowError::ThreadBusy(thread_id.to_owned()))
    }
}

impl CompiledGraph {
    pub fn with_interrupt_hook(mut self, hook: Arc<dyn InterruptHook>) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    pub fn is_interrupt(&self, node: &str) -> bool {
        self.interrupts.contains(node)
    }

    /// Runs the graph from its entry node. A finished thread continues as a
    /// new turn: `input` is merged onto its last state. An interrupted thread
    /// must be resumed instead.
    pub fn invoke(&self, input: Delta, thread_id: &str, cp: &dyn Checkpointer) -> Result<Outcome, WorkflowError> {
        self.check_keys(&input)?;
        let _held = hold(cp, thread_id)?;
        let (mut state, step) = match cp.latest(thread_id)? {
            Some(Snapshot {
                status: ThreadStatus::Interrupted { ticket_id },
                ..
            }) => {
                return Err(WorkflowError::AwaitingHuman {
                    thread_id: thread_id.to_owned(),
                    ticket_id,
                })
            }
            Some(last) => (last.state, last.step),
            None => (WorkflowState::new(), 0),
        };
        state.merge(&input);
        self.run(thread_id, state, self.entry.clone(), step, false, cp)
    }

    /// Merges human input into an interrupted thread and runs the node it
    /// paused before, then onward.
    pub fn resume(&self, thread_id: &str, human_input: Delta, cp: &dyn Checkpointer) -> Result<Outcome, WorkflowError> {
        self.check_keys(&human_input)?;
        let _held = hold(cp, thread_id)?;
        let last = cp
            .latest(thread_id)?
            .ok_or_else(|| WorkflowError::UnknownThread(thread_id.to_owned()))?;
        if !matches!(last.status, ThreadStatus::Interrupted { .. }) {
            return Err(WorkflowError::NotInterrupted(thread_id.to_owned()));
        }
        let mut state = last.state;
        state.merge(&human_input);
        self.run(thread_id, state, last.node, last.step, true, cp)
    }

    /// Continues a thread whose last snapshot is `running`, which happens
    /// when the process died between nodes or a node failed.
    pub fn recover(&self, thread_id: &str, cp: &dyn Checkpointer) -> Result<Outcome, WorkflowError> {
        let _held = hold(cp, thread_id)?;
        let last = cp
            .latest(thread_id)?
            .ok_or_else(|| WorkflowError::UnknownThread(thread_id.to_owned()))?;
        match last.status {
            ThreadStatus::Running => {}
            ThreadStatus::Finished => return Ok(Outcome::Finished(last.state)),
            ThreadStatus::Interrupted { ticket_id } => {
                return Ok(Outcome::Interrupted {
                    ticket_id,
                    node: last.node,
                    state: last.state,
                })
            }
        }
        let next = self.successor(&last.node, &last.state)?;
        self.run(thread_id, last.state, next, last.step, false, cp)
    }

    pub fn state_history(&self, thread_id: &str, cp: &dyn Checkpointer) -> Result<Vec<Snapshot>, WorkflowError> {
        cp.history(thread_id)?
            .ok_or_else(|| WorkflowError::UnknownThread(thread_id.to_owned()))
    }

    /// Re-executes the step that followed `prev`, without touching any
    /// checkpointer or hook. `human_input` is needed only when `prev` is an
    /// interrupted snapshot. Interrupted results carry an empty ticket id.
    pub fn replay_step(&self, prev: &Snapshot, human_input: Option<&Delta>) -> Result<Snapshot, WorkflowError> {
        let mut state = prev.state.clone();
        let node = match &prev.status {
            ThreadStatus::Finished => return Err(WorkflowError::NotReplayable(prev.step)),
            ThreadStatus::Interrupted { .. } => {
                if let Some(input) = human_input {
                    state.merge(input);
                }
                prev.node.clone()
            }
            ThreadStatus::Running => {
                let next = self.successor(&prev.node, &prev.state)?;
                if self.is_interrupt(&next) {
                    return Ok(Snapshot {
                        step: prev.step + 1,
                        node: next,
                        status: ThreadStatus::Interrupted { ticket_id: String::new() },
                        state,
                    });
                }
                next
            }
        };
        let (state, status, _) = self.execute(&node, state)?;
        Ok(Snapshot {
            step: prev.step + 1,
            node,
            status,
            state,
        })
    }

    fn check_keys(&self, delta: &Delta) -> Result<(), WorkflowError> {
        match delta.keys().find(|k| !self.schema.contains(*k)) {
            Some(k) => Err(WorkflowError::UndeclaredKey(k.clone())),
            None => Ok(()),
        }
    }

    fn successor(&self, node: &str, state: &WorkflowState) -> Result<String, WorkflowError> {
        match &self.next[node] {
            Next::Static(to) => Ok(to.clone()),
            Next::Routed(def) => {
                let to = (def.router)(state);
                if def.targets.contains(&to) {
                    Ok(to)
                } else {
                    Err(WorkflowError::NodeFailure {
                        node: node.to_owned(),
                        cause: format!("router returned undeclared target {to:?}"),
                    })
                }
            }
        }
    }

    /// Runs one node and decides the status its snapshot gets.
    fn execute(&self, node: &str, mut state: WorkflowState) -> Result<(WorkflowState, ThreadStatus, String), WorkflowError> {
        let def = &self.nodes[node];
        let delta = (def.handler)(&state).map_err(|cause| WorkflowError::NodeFailure {
            node: node.to_owned(),
            cause,
        })?;
        if let Some(k) = delta.keys().find(|k| !def.writes.contains(*k)) {
            return Err(WorkflowError::NodeFailure {
                node: node.to_owned(),
                cause: format!("wrote undeclared key {k:?}"),
            });
        }
        state.merge(&delta);
        let next = self.successor(node, &state)?;
        let status = if next == END { ThreadStatus::Finished } else { ThreadStatus::Running };
        Ok((state, status, next))
    }

    fn run(
        &self,
        thread_id: &str,
        mut state: WorkflowState,
        mut node: String,
        mut step: u64,
        mut resuming: bool,
        cp: &dyn Checkpointer,
    ) -> Result<Outcome, WorkflowError> {
        let mut executed = 0u32;
        loop {
            if self.is_interrupt(&node) && !resuming {
                let ticket_id = match &self.hook {
                    Some(h) => h.on_interrupt(thread_id, &node, &state).map_err(WorkflowError::InterruptHook)?,
                    None => format!("{thread_id}#{}", step + 1),
                };
                step += 1;
                cp.append(
                    thread_id,
                    &Snapshot {
                        step,
                        node: node.clone(),
                        status: ThreadStatus::Interrupted {
                            ticket_id: ticket_id.clone(),
                        },
                        state: state.clone(),
                    },
                )?;
                return Ok(Outcome::Interrupted { ticket_id, node, state });
            }
            resuming = false;
            if executed == self.cycle_budget {
                return Err(WorkflowError::CycleBudgetExceeded {
                    budget: self.cycle_budget,
                    step,
                });
            }
            let (next_state, status, next) = self.execute(&node, state)?;
            state = next_state;
            executed += 1;
            step += 1;
            let finished = status == ThreadStatus::Finished;
            cp.append(
                thread_id,
                &Snapshot {
                    step,
                    node,
                    status,
                    state: state.clone(),
                },
            )?;
            if finished {
                return Ok(Outcome::Finished(state));
            }
            node = next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{delta, MemoryCheckpointer};
    use serde_json::json;
    use std::sync::Mutex;

    fn linear() -> CompiledGraph {
        let mut g = StateGraph::new(["a", "b", "c", "input"]);
        g.add_node("A", &["a"], |_| Ok(delta([("a", 1)])))
            .add_node("B", &["b"], |s| Ok(delta([("b", s.get_f64("a").unwrap() + 1.0)])))
            .add_node("C", &["c"], |_| Ok(delta([("c", "done")])))
            .add_edge("A", "B")
            .add_edge("B", "C")
            .add_edge("C", END)
            .set_entry("A");
        g.compile().unwrap()
    }

    fn gated() -> CompiledGraph {
        let mut g = StateGraph::new(["score", "response", "path"]);
        g.add_node("score", &[], |_| Ok(Delta::new()))
            .add_node("auto", &["response", "path"], |_| Ok(delta([("response", json!("auto")), ("path", json!("auto"))])))
            .add_node("review", &["path"], |_| Ok(delta([("path", "review")])))
            .add_conditional_edges("score", &["auto", "review"], |s| {
                if s.get_f64("score").unwrap_or(0.0) < 0.0 { "review".into() } else { "auto".into() }
            })
            .add_edge("auto", END)
            .add_edge("review", END)
            .set_entry("score")
            .interrupt_before("review");
        g.compile().unwrap()
    }

    #[test]
    fn two_node_graph_compiles() {
        let mut g = StateGraph::new(["x"]);
        g.add_node("A", &[], |_| Ok(Delta::new()))
            .add_node("B", &[], |_| Ok(Delta::new()))
            .add_edge("A", "B")
            .add_edge("B", END)
            .set_entry("A");
        assert!(g.compile().is_ok());
    }

    #[test]
    fn compile_reports_every_violation() {
        let mut g = StateGraph::new(["x"]);
        g.add_node("A", &["y"], |_| Ok(Delta::new()))
            .add_node("B", &[], |_| Ok(Delta::new()))
            .add_edge("A", "X")
            .add_edge("B", END)
            .add_conditional_edges("B", &["A"], |_| "A".into())
            .add_edge("Ghost", "A");
        let err = g.compile().err().unwrap();
        assert_eq!(err.missing_nodes(), vec!["X"]);
        assert!(err.violations.contains(&GraphViolation::NoEntry));
        assert!(err.violations.contains(&GraphViolation::DualRouting("B".into())));
        assert!(err.violations.contains(&GraphViolation::DanglingEdge { from: "Ghost".into() }));
        assert!(err.violations.contains(&GraphViolation::UndeclaredWrite { node: "A".into(), key: "y".into() }));
    }

    #[test]
    fn multiple_entries_rejected() {
        let mut g = StateGraph::new(["x"]);
        g.add_node("A", &[], |_| Ok(Delta::new())).add_edge("A", END).set_entry("A").set_entry("A");
        assert!(matches!(g.compile().err().unwrap().violations[0], GraphViolation::MultipleEntries(_)));
    }

    #[test]
    fn linear_run_snapshots_each_node() {
        let g = linear();
        let cp = MemoryCheckpointer::new();
        let out = g.invoke(Delta::new(), "t1", &cp).unwrap();
        let state = out.state();
        assert_eq!(state.get_f64("a"), Some(1.0));
        assert_eq!(state.get_f64("b"), Some(2.0));
        assert_eq!(state.get_str("c"), Some("done"));
        let h = g.state_history("t1", &cp).unwrap();
        let nodes: Vec<&str> = h.iter().map(|s| s.node.as_str()).collect();
        assert_eq!(nodes, ["A", "B", "C"]);
        assert_eq!(h.iter().map(|s| s.step).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(h[2].status, ThreadStatus::Finished);
        assert_eq!(h[0].status, ThreadStatus::Running);
    }

    #[test]
    fn interrupt_then_resume() {
        let g = gated();
        let cp = MemoryCheckpointer::new();
        let out = g.invoke(delta([("score", -1.0)]), "t", &cp).unwrap();
        let Outcome::Interrupted { ticket_id, node, .. } = out else { panic!("expected interrupt") };
        assert_eq!(node, "review");
        let last = cp.latest("t").unwrap().unwrap();
        assert_eq!(last.status, ThreadStatus::Interrupted { ticket_id });
        assert!(matches!(g.invoke(Delta::new(), "t", &cp), Err(WorkflowError::AwaitingHuman { .. })));

        let out = g.resume("t", delta([("response", "refund approved")]), &cp).unwrap();
        assert!(out.is_finished());
        assert_eq!(out.state().get_str("response"), Some("refund approved"));
        assert_eq!(out.state().get_str("path"), Some("review"));
        assert!(matches!(g.resume("t", Delta::new(), &cp), Err(WorkflowError::NotInterrupted(_))));
        assert!(matches!(g.resume("nope", Delta::new(), &cp), Err(WorkflowError::UnknownThread(_))));
    }

    #[test]
    fn budget_stops_cycles() {
        let mut g = StateGraph::new(["n"]);
        g.add_node("loop", &["n"], |s| Ok(delta([("n", s.get_f64("n").unwrap_or(0.0) + 1.0)])))
            .add_conditional_edges("loop", &["loop", END], |_| "loop".into())
            .set_entry("loop");
        let g = g.compile().unwrap();
        let cp = MemoryCheckpointer::new();
        match g.invoke(Delta::new(), "t", &cp) {
            Err(WorkflowError::CycleBudgetExceeded { budget: 25, step: 25 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(cp.history("t").unwrap().unwrap().len(), 25);
    }

    #[test]
    fn router_outside_targets_is_node_failure() {
        let mut g = StateGraph::new(["x"]);
        g.add_node("A", &[], |_| Ok(Delta::new()))
            .add_conditional_edges("A", &[END], |_| "elsewhere".into())
            .set_entry("A");
        let err = g.compile().unwrap().invoke(Delta::new(), "t", &MemoryCheckpointer::new()).unwrap_err();
        assert!(matches!(err, WorkflowError::NodeFailure { .. }));
    }

    #[test]
    fn failure_keeps_prior_snapshots_and_recover_continues() {
        let flaky = Arc::new(Mutex::new(true));
        let f = flaky.clone();
        let mut g = StateGraph::new(["a", "b"]);
        g.add_node("A", &["a"], |_| Ok(delta([("a", 1)])))
            .add_node("B", &["b"], move |_| if *f.lock().unwrap() { Err("boom".into()) } else { Ok(delta([("b", 2)])) })
            .add_edge("A", "B")
            .add_edge("B", END)
            .set_entry("A");
        let g = g.compile().unwrap();
        let cp = MemoryCheckpointer::new();
        assert!(matches!(g.invoke(Delta::new(), "t", &cp), Err(WorkflowError::NodeFailure { .. })));
        let h = cp.history("t").unwrap().unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].state.get_f64("a"), Some(1.0));
        *flaky.lock().unwrap() = false;
        let out = g.recover("t", &cp).unwrap();
        assert_eq!(out.state().get_f64("b"), Some(2.0));
    }

    #[test]
    fn undeclared_writes_fail() {
        let mut g = StateGraph::new(["a"]);
        g.add_node("A", &["a"], |_| Ok(delta([("zzz", 1)]))).add_edge("A", END).set_entry("A");
        let g = g.compile().unwrap();
        let cp = MemoryCheckpointer::new();
        assert!(matches!(g.invoke(Delta::new(), "t", &cp), Err(WorkflowError::NodeFailure { .. })));
        assert!(matches!(g.invoke(delta([("nope", 1)]), "t", &cp), Err(WorkflowError::UndeclaredKey(_))));
    }

    #[test]
    fn busy_thread_rejected() {
        let g = linear();
        let cp = MemoryCheckpointer::new();
        assert!(cp.locks().try_acquire("t"));
        assert!(matches!(g.invoke(Delta::new(), "t", &cp), Err(WorkflowError::ThreadBusy(_))));
        cp.locks().release("t");
        assert!(g.invoke(Delta::new(), "t", &cp).is_ok());
    }

    #[test]
    fn finished_thread_takes_another_turn() {
        let g = linear();
        let cp = MemoryCheckpointer::new();
        g.invoke(delta([("input", "first")]), "t", &cp).unwrap();
        let out = g.invoke(delta([("input", "second")]), "t", &cp).unwrap();
        assert_eq!(out.state().get_str("input"), Some("second"));
        let steps: Vec<u64> = cp.history("t").unwrap().unwrap().iter().map(|s| s.step).collect();
        assert_eq!(steps, [1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn replay_reproduces_history() {
        let g = gated();
        let cp = MemoryCheckpointer::new();
        g.invoke(delta([("score", -1.0)]), "t", &cp).unwrap();
        let input = delta([("response", "ok")]);
        g.resume("t", input.clone(), &cp).unwrap();
        let h = cp.history("t").unwrap().unwrap();
        assert_eq!(h.len(), 3);
        let replayed = g.replay_step(&h[0], None).unwrap();
        assert_eq!(replayed.node, h[1].node);
        assert_eq!(replayed.state, h[1].state);
        assert_eq!(g.replay_step(&h[1], Some(&input)).unwrap(), h[2]);
        assert!(matches!(g.replay_step(&h[2], None), Err(WorkflowError::NotReplayable(3))));
    }

    #[test]
    fn hook_supplies_ticket_ids() {
        struct Fixed;
        impl InterruptHook for Fixed {
            fn on_interrupt(&self, thread_id: &str, node: &str, _: &WorkflowState) -> Result<String, String> {
                Ok(format!("{node}@{thread_id}"))
            }
        }
        let g = gated().with_interrupt_hook(Arc::new(Fixed));
        let out = g.invoke(delta([("score", -1.0)]), "t9", &MemoryCheckpointer::new()).unwrap();
        assert!(matches!(out, Outcome::Interrupted { ticket_id, .. } if ticket_id == "review@t9"));
    }
}
