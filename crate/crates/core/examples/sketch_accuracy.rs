//! Inserts growing numbers of distinct IPs into an exact set and a p=14
//! sketch, printing the estimate, relative error, mode and encoded size.

use rtstream::cardinality::{CardinalitySketch, ExactDistinctState};

fn main() {
    let mut sketch = CardinalitySketch::new(14).unwrap();
    let mut exact = ExactDistinctState::new();
    let checkpoints = [100u32, 1_000, 5_000, 20_000, 100_000, 500_000];
    let mut next = 0;

    println!("{:>8} {:>8} {:>8} {:>7} {:>7} {:>8}", "n", "exact", "est", "err%", "mode", "bytes");
    for i in 0..*checkpoints.last().unwrap() {
        let ip = format!("{}.{}.{}.{}", i >> 24, (i >> 16) & 255, (i >> 8) & 255, i & 255);
        // Every address twice; duplicates must not move either count.
        for _ in 0..2 {
            sketch.insert(ip.as_bytes());
            exact.insert(&ip);
        }
        if i + 1 == checkpoints[next] {
            let est = sketch.estimate();
            let err = 100.0 * (est as f64 - exact.count() as f64).abs() / exact.count() as f64;
            println!(
                "{:>8} {:>8} {:>8} {:>7.3} {:>7?} {:>8}",
                i + 1,
                exact.count(),
                est,
                err,
                sketch.mode(),
                sketch.to_bytes().len()
            );
            next += 1;
        }
    }

    // Two halves merged give the same registers as one sketch over all.
    let (mut a, mut b) = (CardinalitySketch::new(14).unwrap(), CardinalitySketch::new(14).unwrap());
    for i in 0..50_000u32 {
        let key = i.to_le_bytes();
        if i % 2 == 0 { a.insert(&key) } else { b.insert(&key) }
    }
    let merged = a.merge(&b).unwrap();
    println!("merged halves of 50000: {}", merged.estimate());

    let restored = CardinalitySketch::from_bytes(&sketch.to_bytes()).unwrap();
    assert_eq!(restored.estimate(), sketch.estimate());
}
