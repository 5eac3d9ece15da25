use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rtstream::sentiment::{build_graph, keys, HUMAN_REVIEW, Classifier, ClassifierError, Label, SentimentConfig, SentimentResult};
use rtstream::workflow::{
    delta, CompiledGraph, GraphViolation, MemoryCheckpointer, Outcome, StateGraph, ThreadStatus, WorkflowError, END,
};
use serde_json::json;

/// Returns a fixed verdict regardless of input.
pub struct Stub {
    pub category: String,
    pub label: Label,
    pub confidence: f64,
}

impl Classifier for Stub {
    fn id(&self) -> &str {
        "stub"
    }
    fn categorize(&self, _: &str, _: &[String]) -> Result<String, ClassifierError> {
        Ok(self.category.clone())
    }
    fn analyze(&self, _: &str) -> Result<SentimentResult, ClassifierError> {
        Ok(SentimentResult {
            label: self.label,
            confidence: self.confidence,
            classifier_id: "stub".into(),
        })
    }
}

pub fn stub_graph(category: &str, label: Label, confidence: f64) -> CompiledGraph {
    let stub = Stub {
        category: category.into(),
        label,
        confidence,
    };
    build_graph(Arc::new(stub), Arc::new(SentimentConfig::default()))
}

fn violations(g: StateGraph) -> Vec<GraphViolation> {
    match g.compile() {
        Ok(_) => Vec::new(),
        Err(e) => e.violations,
    }
}

fn ok(_: &rtstream::workflow::WorkflowState) -> Result<rtstream::workflow::Delta, String> {
    Ok(Default::default())
}

/// One malformed graph per violation class; each must be rejected with
/// that class among the reported violations.
pub fn compile_rejections() -> String {
    let mut cases: Vec<(&str, StateGraph, GraphViolation)> = Vec::new();

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_edge("a", END);
    cases.push(("no entry", g, GraphViolation::NoEntry));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_node("b", &[], ok).add_edge("a", END).add_edge("b", END).set_entry("a").set_entry("b");
    cases.push(("two entries", g, GraphViolation::MultipleEntries(vec!["a".into(), "b".into()])));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_edge("a", "ghost").set_entry("a");
    cases.push(("edge to missing node", g, GraphViolation::MissingNode("ghost".into())));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_conditional_edges("a", &["b", END], |_| END.into()).set_entry("a");
    cases.push(("router to missing node", g, GraphViolation::MissingNode("b".into())));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_edge("a", END).add_edge("nowhere", "a").set_entry("a");
    cases.push(("edge from undefined node", g, GraphViolation::DanglingEdge { from: "nowhere".into() }));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok)
        .add_node("b", &[], ok)
        .add_edge("a", "b")
        .add_conditional_edges("a", &["b"], |_| "b".into())
        .add_edge("b", END)
        .set_entry("a");
    cases.push(("edge and router", g, GraphViolation::DualRouting("a".into())));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_node("b", &[], ok).add_edge("a", "b").add_edge("a", END).add_edge("b", END).set_entry("a");
    cases.push(("two static edges", g, GraphViolation::MultipleEdges("a".into())));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_node("b", &[], ok).add_edge("a", "b").set_entry("a");
    cases.push(("dead end", g, GraphViolation::NoExit("b".into())));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_node("a", &[], ok).add_edge("a", END).set_entry("a");
    cases.push(("duplicate node", g, GraphViolation::DuplicateNode("a".into())));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &["x", "y"], ok).add_edge("a", END).set_entry("a");
    cases.push((
        "write outside schema",
        g,
        GraphViolation::UndeclaredWrite {
            node: "a".into(),
            key: "y".into(),
        },
    ));

    let mut g = StateGraph::new(["x"]);
    g.add_node("a", &[], ok).add_edge("a", END).set_entry("a").interrupt_before("b");
    cases.push(("interrupt on missing node", g, GraphViolation::MissingNode("b".into())));

    let n = cases.len();
    for (name, g, want) in cases {
        let got = violations(g);
        assert!(got.contains(&want), "{name}: expected {want:?}, got {got:?}");
    }
    format!("{n} malformed graphs rejected")
}

/// Randomized verdicts: negative or below-threshold confidence always stops
/// before human review; anything else is answered automatically.
pub fn escalation_property(cases: u32) -> String {
    let cfg = SentimentConfig::default();
    let categories = cfg.category_names();
    let threshold = cfg.threshold;
    let confidence = prop_oneof![
        0.0f64..=1.0,
        Just(threshold),
        Just(threshold - 1e-9),
        Just(0.0),
        Just(1.0),
    ];
    let label = prop::sample::select(vec![Label::Positive, Label::Neutral, Label::Negative]);
    let strategy = (prop::sample::select(categories), label, confidence, "[a-zA-Z !?.,']{1,80}");
    let escalated = AtomicU32::new(0);
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
    .run(&strategy, |(category, label, confidence, query)| {
        prop_assume!(!query.trim().is_empty());
        let graph = stub_graph(&category, label, confidence);
        let out = graph
            .invoke(delta([(keys::QUERY, query.as_str())]), "t", &MemoryCheckpointer::new())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let should = label == Label::Negative || confidence < threshold;
        match &out {
            Outcome::Interrupted { node, .. } => {
                prop_assert!(should, "{:?}/{} escalated", label, confidence);
                prop_assert_eq!(node.as_str(), HUMAN_REVIEW);
                escalated.fetch_add(1, Ordering::Relaxed);
            }
            Outcome::Finished(s) => {
                prop_assert!(!should, "{:?}/{} answered automatically", label, confidence);
                prop_assert_eq!(s.get_bool(keys::ESCALATED), Some(false));
            }
        }
        Ok(())
    })
    .unwrap_or_else(|e| panic!("escalation: {e}"));
    format!("{cases} randomized verdicts, {} escalated, none misrouted", escalated.into_inner())
}

/// Whatever the reviewer writes is what the finished state holds.
pub fn resume_verbatim(cases: u32) -> String {
    let graph = stub_graph("billing", Label::Negative, 0.9);
    let strategy = ("\\PC{1,200}", "[a-z]{0,12}");
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
    .run(&strategy, |(response, reviewer)| {
        prop_assume!(!response.trim().is_empty());
        let cp = MemoryCheckpointer::new();
        let out = graph.invoke(delta([(keys::QUERY, "charged twice")]), "t", &cp).unwrap();
        prop_assert!(matches!(out, Outcome::Interrupted { .. }), "not interrupted");
        let input = delta([(keys::RESPONSE, json!(response)), (keys::REVIEWER, json!(reviewer))]);
        let done = graph.resume("t", input, &cp).unwrap();
        prop_assert!(done.is_finished());
        prop_assert_eq!(done.state().get_str(keys::RESPONSE), Some(response.as_str()));
        prop_assert_eq!(done.state().get_str(keys::REVIEWER), Some(reviewer.as_str()));
        prop_assert_eq!(done.state().get_bool(keys::ESCALATED), Some(true));
        Ok(())
    })
    .unwrap_or_else(|e| panic!("resume: {e}"));
    format!("{cases} responses carried through unchanged")
}

/// Replaying each recorded snapshot reproduces the one after it.
pub fn replay_reproduces_history() -> String {
    let mut checked = 0;
    for (label, confidence) in [(Label::Positive, 0.95), (Label::Neutral, 0.8), (Label::Negative, 0.9), (Label::Positive, 0.3)] {
        let graph = stub_graph("service", label, confidence);
        let cp = MemoryCheckpointer::new();
        let human = delta([(keys::RESPONSE, json!("We are on it.")), (keys::REVIEWER, json!("kim"))]);
        if let Outcome::Interrupted { .. } = graph.invoke(delta([(keys::QUERY, "the waiter was slow")]), "t", &cp).unwrap() {
            graph.resume("t", human.clone(), &cp).unwrap();
        }
        let history = graph.state_history("t", &cp).unwrap();
        assert_eq!(history.last().unwrap().status, ThreadStatus::Finished);
        for pair in history.windows(2) {
            let input = matches!(pair[0].status, ThreadStatus::Interrupted { .. }).then_some(&human);
            let mut replayed = graph.replay_step(&pair[0], input).unwrap();
            let mut want = pair[1].clone();
            for s in [&mut replayed.status, &mut want.status] {
                if let ThreadStatus::Interrupted { ticket_id } = s {
                    ticket_id.clear();
                }
            }
            assert_eq!(replayed, want, "replay of step {} diverged", pair[0].step);
            checked += 1;
        }
    }
    format!("{checked} transitions reproduced")
}

/// A two-node loop is cut off after exactly 25 executions, and a chain of
/// exactly 25 nodes still finishes.
pub fn cycle_budget() -> String {
    let runs = Arc::new(AtomicU32::new(0));
    let mut g = StateGraph::new(["n"]);
    let (r1, r2) = (runs.clone(), runs.clone());
    g.add_node("ping", &["n"], move |_| Ok(delta([("n", r1.fetch_add(1, Ordering::SeqCst) + 1)])))
        .add_node("pong", &["n"], move |_| Ok(delta([("n", r2.fetch_add(1, Ordering::SeqCst) + 1)])))
        .add_edge("ping", "pong")
        .add_conditional_edges("pong", &["ping", END], |_| "ping".into())
        .set_entry("ping");
    let graph = g.compile().unwrap();
    let cp = MemoryCheckpointer::new();
    match graph.invoke(Default::default(), "loop", &cp) {
        Err(WorkflowError::CycleBudgetExceeded { budget: 25, step: 25 }) => {}
        other => panic!("expected budget error, got {other:?}"),
    }
    assert_eq!(runs.load(Ordering::SeqCst), 25);
    assert_eq!(graph.state_history("loop", &cp).unwrap().len(), 25);

    let chain = |len: usize| {
        let mut g = StateGraph::new(["n"]);
        for i in 0..len {
            g.add_node(&format!("s{i}"), &[], ok);
            let next = if i + 1 == len { END.to_string() } else { format!("s{}", i + 1) };
            g.add_edge(&format!("s{i}"), &next);
        }
        g.set_entry("s0");
        g.compile().unwrap()
    };
    assert!(chain(25).invoke(Default::default(), "c", &MemoryCheckpointer::new()).unwrap().is_finished());
    assert!(matches!(
        chain(26).invoke(Default::default(), "c", &MemoryCheckpointer::new()),
        Err(WorkflowError::CycleBudgetExceeded { budget: 25, .. })
    ));
    "loop stopped at 25 executions; 25-node chain finishes, 26-node chain does not".into()
}
