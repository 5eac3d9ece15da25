use std::collections::BTreeMap;
use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtstream::queue::{Broker, BrokerConfig, Message};

fn open(dir: &std::path::Path, sync: bool) -> Broker {
    let mut cfg = BrokerConfig::new(dir).partitions(4);
    cfg.sync_writes = sync;
    Broker::open(cfg).unwrap()
}

fn drain(broker: &Broker, group: &str, topic: &str, chunk: usize) -> Vec<Message> {
    let mut out = Vec::new();
    loop {
        let got = broker.poll(group, topic, chunk).unwrap();
        if got.is_empty() {
            return out;
        }
        let mut next = BTreeMap::new();
        for m in &got {
            let e = next.entry(m.partition).or_insert(0);
            *e = (*e).max(m.offset + 1);
        }
        broker.commit(group, topic, &next).unwrap();
        out.extend(got);
    }
}

/// Random keyed and unkeyed publishes over two topics; every partition must
/// hand messages back in publish order.
pub fn fifo(publishes: usize, seed: u64) -> String {
    let dir = tempfile::tempdir().unwrap();
    let broker = open(dir.path(), false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = ["events.browse", "events.play"];
    let mut expected: BTreeMap<(&str, u32), Vec<Vec<u8>>> = BTreeMap::new();
    for i in 0..publishes {
        let topic = topics[rng.gen_range(0..topics.len())];
        let key = rng.gen_bool(0.5).then(|| format!("k{}", rng.gen_range(0..50)));
        let mut payload = (i as u64).to_le_bytes().to_vec();
        payload.extend((0..rng.gen_range(0..48)).map(|_| rng.gen::<u8>()));
        let (p, off) = broker.publish(topic, key.as_deref().map(str::as_bytes), &payload).unwrap();
        let slot = expected.entry((topic, p)).or_default();
        assert_eq!(off, slot.len() as u64, "offsets must be dense per partition");
        slot.push(payload);
    }
    let mut consumed: BTreeMap<(&str, u32), Vec<Vec<u8>>> = BTreeMap::new();
    for topic in topics {
        for m in drain(&broker, "fifo", topic, 997) {
            let slot = consumed.entry((topic, m.partition)).or_default();
            assert_eq!(m.offset, slot.len() as u64, "{topic}/{} out of order", m.partition);
            slot.push(m.payload);
        }
    }
    assert_eq!(consumed, expected);
    format!("{publishes} publishes over {} partitions in order", expected.len())
}

/// A consumer that polls and dies before committing sees the same messages
/// again; committed ones are not redelivered.
pub fn at_least_once() -> String {
    let dir = tempfile::tempdir().unwrap();
    let topic = "events.search";
    {
        let broker = open(dir.path(), true);
        for i in 0..1_000u32 {
            broker.publish(topic, None, format!("m{i}").as_bytes()).unwrap();
        }
    }
    let first = {
        let broker = open(dir.path(), true);
        let batch = broker.poll("g", topic, 300).unwrap();
        assert_eq!(batch.len(), 300);
        batch
    };
    let (second, committed) = {
        let broker = open(dir.path(), true);
        let again = broker.poll("g", topic, 300).unwrap();
        assert_eq!(again, first, "uncommitted messages must be redelivered unchanged");
        let half: BTreeMap<u32, u64> = again[..150].iter().fold(BTreeMap::new(), |mut acc, m| {
            let e = acc.entry(m.partition).or_insert(0);
            *e = (*e).max(m.offset + 1);
            acc
        });
        broker.commit("g", topic, &half).unwrap();
        (again, half)
    };
    let broker = open(dir.path(), true);
    let third = broker.poll("g", topic, 1_000).unwrap();
    assert_eq!(third.len(), 850);
    for m in &third {
        assert!(m.offset >= committed.get(&m.partition).copied().unwrap_or(0));
    }
    let redelivered = second[150..].iter().filter(|m| third.contains(m)).count();
    assert_eq!(redelivered, 150);
    let all = drain(&broker, "g", topic, 128);
    assert_eq!(all.len(), 850);
    "crash before commit redelivers 300/300, crash after partial commit redelivers exactly the uncommitted 150".into()
}

/// Binary keys and payloads read back identically after a restart, and
/// reopening does not touch the segment files.
pub fn segment_round_trip(seed: u64) -> String {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topic = "events.share";
    let before = {
        let broker = open(dir.path(), true);
        for _ in 0..5_000 {
            let key: Option<Vec<u8>> = rng.gen_bool(0.3).then(|| (0..rng.gen_range(0..12)).map(|_| rng.gen()).collect());
            let payload: Vec<u8> = (0..rng.gen_range(0..300)).map(|_| rng.gen()).collect();
            broker.publish(topic, key.as_deref(), &payload).unwrap();
        }
        broker.poll("r", topic, 10_000).unwrap()
    };
    let seg_bytes = |d: &std::path::Path| -> Vec<Vec<u8>> {
        (0..4).map(|p| fs::read(d.join(topic).join(format!("{p}.seg"))).unwrap()).collect()
    };
    let files = seg_bytes(dir.path());
    let broker = open(dir.path(), true);
    let after = broker.poll("r", topic, 10_000).unwrap();
    assert_eq!(after.len(), 5_000);
    assert_eq!(after, before, "messages differ after restart");
    assert_eq!(seg_bytes(dir.path()), files, "segment files changed on reopen");
    let total: usize = files.iter().map(Vec::len).sum();
    format!("5000 messages, {total} segment bytes identical after restart")
}
