//! Publishes keyed messages to a file-backed topic, consumes part of them,
//! reopens the broker and shows that only uncommitted messages come back.

use std::collections::BTreeMap;

use rtstream::queue::{Broker, BrokerConfig, Message};

fn commit_all(broker: &Broker, got: &[Message]) {
    let mut next = BTreeMap::new();
    for m in got {
        let e = next.entry(m.partition).or_insert(0);
        *e = (*e).max(m.offset + 1);
    }
    broker.commit("demo", "events.play", &next).unwrap();
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let open = || Broker::open(BrokerConfig::new(dir.path()).partitions(3)).unwrap();

    let broker = open();
    for i in 0..30 {
        let key = format!("user{}", i % 5);
        let (p, off) = broker.publish("events.play", Some(key.as_bytes()), format!("msg {i}").as_bytes()).unwrap();
        if i < 5 {
            println!("{key} -> partition {p} offset {off}");
        }
    }
    println!("end offsets: {:?}", broker.end_offsets("events.play").unwrap());

    let first = broker.poll("demo", "events.play", 10).unwrap();
    commit_all(&broker, &first);
    println!("consumed and committed {} messages", first.len());
    drop(broker);

    let broker = open();
    let mut rest = 0;
    loop {
        let got = broker.poll("demo", "events.play", 100).unwrap();
        if got.is_empty() {
            break;
        }
        commit_all(&broker, &got);
        rest += got.len();
    }
    println!("after reopen, {rest} messages were still pending for the group");
    assert_eq!(first.len() + rest, 30);
}
