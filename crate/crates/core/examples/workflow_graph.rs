//! A small approval graph: draft, pause for a human, then publish or
//! revise. Shows compile checks, interrupts, resume and history.

use rtstream::workflow::{delta, MemoryCheckpointer, Outcome, StateGraph, END};
use serde_json::json;

fn main() {
    let mut g = StateGraph::new(["topic", "draft", "approved", "published"]);
    g.add_node("draft", &["draft"], |s| {
        let topic = s.get_str("topic").unwrap_or("nothing");
        Ok(delta([("draft", json!(format!("A short note about {topic}.")))]))
    })
    .add_node("review", &[], |_| Ok(Default::default()))
    .add_node("publish", &["published"], |_| Ok(delta([("published", json!(true))])))
    .set_entry("draft")
    .add_edge("draft", "review")
    .add_conditional_edges("review", &["publish", "draft"], |s| {
        if s.get_bool("approved") == Some(true) { "publish".into() } else { "draft".into() }
    })
    .add_edge("publish", END)
    .interrupt_before("review");

    let graph = g.compile().expect("graph is well formed");
    let cp = MemoryCheckpointer::new();

    match graph.invoke(delta([("topic", json!("rivers"))]), "note-1", &cp).unwrap() {
        Outcome::Interrupted { ticket_id, node, state } => {
            println!("paused before {node} as {ticket_id}; draft = {}", state.get_str("draft").unwrap());
        }
        Outcome::Finished(_) => unreachable!(),
    }

    let done = graph.resume("note-1", delta([("approved", json!(true))]), &cp).unwrap();
    println!("finished: {}", done.is_finished());
    for snap in graph.state_history("note-1", &cp).unwrap() {
        println!("  {snap:?}");
    }

    // A graph with an edge to a node that does not exist is rejected.
    let mut bad = StateGraph::new(["x"]);
    bad.add_node("a", &[], |_| Ok(Default::default())).add_edge("a", "ghost").set_entry("a");
    println!("bad graph: {}", bad.compile().err().unwrap());
}
