use std::collections::HashSet;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtstream::cardinality::{CardinalitySketch, ExactDistinctState};

const P: u8 = 14;

fn sketch_of(p: u8, items: &[u64]) -> CardinalitySketch {
    let mut s = CardinalitySketch::new(p).unwrap();
    for i in items {
        s.insert(&i.to_le_bytes());
    }
    s
}

/// Item sets small enough to stay sparse and large enough to go dense.
fn items() -> impl Strategy<Value = Vec<u64>> {
    prop_oneof![
        prop::collection::vec(any::<u64>(), 0..200),
        prop::collection::vec(0u64..5_000, 0..4_000),
        prop::collection::vec(any::<u64>(), 2_000..8_000),
    ]
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

pub fn merge_algebra(trials: u32) -> String {
    let strategy = (prop::sample::select(vec![10u8, 12, 14]), items(), items(), items());
    runner(trials)
        .run(&strategy, |(p, a, b, c)| {
            let (a, b, c) = (sketch_of(p, &a), sketch_of(p, &b), sketch_of(p, &c));
            let empty = CardinalitySketch::new(p).unwrap();
            let ab = a.merge(&b).unwrap();
            prop_assert_eq!(ab.registers(), b.merge(&a).unwrap().registers(), "commutativity");
            let left = ab.merge(&c).unwrap();
            let right = a.merge(&b.merge(&c).unwrap()).unwrap();
            prop_assert_eq!(left.registers(), right.registers(), "associativity");
            prop_assert_eq!(a.merge(&a).unwrap().registers(), a.registers(), "idempotence");
            prop_assert_eq!(a.merge(&empty).unwrap().registers(), a.registers(), "right identity");
            prop_assert_eq!(empty.merge(&a).unwrap().registers(), a.registers(), "left identity");
            prop_assert_eq!(a.merge(&empty).unwrap().estimate(), a.estimate());
            Ok(())
        })
        .unwrap_or_else(|e| panic!("merge algebra: {e}"));
    format!("{trials} trials, commutative/associative/idempotent/identity")
}

/// Estimate never drops as items are added, across the sparse to dense switch.
pub fn monotonicity(trials: u32) -> String {
    let strategy = (prop::sample::select(vec![10u8, 14]), prop::collection::vec(any::<u64>(), 1..12_000), 1usize..64);
    runner(trials)
        .run(&strategy, |(p, items, every)| {
            let mut s = CardinalitySketch::new(p).unwrap();
            let mut last = 0;
            for (i, item) in items.iter().enumerate() {
                s.insert(&item.to_le_bytes());
                if i % every == 0 || i + 1 == items.len() {
                    let e = s.estimate();
                    prop_assert!(e >= last, "estimate fell from {} to {} after {} inserts", last, e, i + 1);
                    last = e;
                }
            }
            Ok(())
        })
        .unwrap_or_else(|e| panic!("monotonicity: {e}"));
    format!("{trials} trials")
}

pub fn order_independence(trials: u32) -> String {
    let strategy = (items(), any::<u64>());
    runner(trials)
        .run(&strategy, |(items, seed)| {
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (a, b) = (sketch_of(P, &items), sketch_of(P, &shuffled));
            prop_assert_eq!(a.registers(), b.registers());
            prop_assert_eq!(a.estimate(), b.estimate());
            Ok(())
        })
        .unwrap_or_else(|e| panic!("order independence: {e}"));
    format!("{trials} trials")
}

pub struct Envelope {
    pub n: u64,
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Relative error over `trials` independent streams of `n` distinct IPs.
pub fn envelope(n: u64, trials: u64) -> Envelope {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + t * 7919 + n);
        let mut sketch = CardinalitySketch::new(P).unwrap();
        let mut exact = ExactDistinctState::new();
        let mut seen = HashSet::new();
        while seen.len() < n as usize {
            let ip: u32 = rng.gen();
            seen.insert(ip);
            let text = std::net::Ipv4Addr::from(ip).to_string();
            sketch.insert(text.as_bytes());
            exact.insert(&text);
        }
        let truth = exact.count();
        assert_eq!(truth, n);
        let err = (sketch.estimate() as f64 - truth as f64).abs() / truth as f64;
        sum += err;
        max = max.max(err);
    }
    Envelope {
        n,
        mean_abs: sum / trials as f64,
        max_abs: max,
    }
}

pub fn sigma() -> f64 {
    1.04 / ((1u64 << P) as f64).sqrt()
}

pub fn accuracy_envelope(trials: u64) -> String {
    let s = sigma();
    let mut parts = Vec::new();
    for n in [1_000, 10_000, 100_000] {
        let e = envelope(n, trials);
        assert!(
            e.mean_abs <= 1.25 * s,
            "n={n}: mean |error| {:.5} exceeds {:.5}",
            e.mean_abs,
            1.25 * s
        );
        assert!(e.max_abs <= 5.0 * s, "n={n}: max |error| {:.5} exceeds {:.5}", e.max_abs, 5.0 * s);
        parts.push(format!("n={n} mean {:.4}% max {:.4}%", e.mean_abs * 100.0, e.max_abs * 100.0));
    }
    parts.join(", ")
}
