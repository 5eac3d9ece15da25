//! Bias correction over the empirical anchor tables.
//!
//! The bias for a raw estimate is the mean bias of the `NEIGHBORS` anchors
//! whose raw estimate is closest. That makes `raw - bias(raw)` piecewise
//! linear with jumps where the neighbour window slides; [`BiasCurve`] returns
//! the running maximum of it so the corrected estimate is non-decreasing in
//! the raw estimate.

use std::sync::OnceLock;

use super::bias_tables::{BIAS_DATA, LINEAR_COUNTING_THRESHOLD, RAW_ESTIMATE_DATA};
use super::{MAX_PRECISION, MIN_PRECISION};

pub(crate) const NEIGHBORS: usize = 6;

pub(crate) struct BiasCurve {
    /// Raw-estimate positions where the neighbour window advances by one.
    breakpoints: Vec<f64>,
    /// Mean bias of each neighbour window; `window_bias.len() == breakpoints.len() + 1`.
    window_bias: Vec<f64>,
    /// `envelope[s]` = max corrected value reached before window `s` starts.
    envelope: Vec<f64>,
}

impl BiasCurve {
    fn build(raw: &[f64], bias: &[f64]) -> Self {
        let mut anchors: Vec<(f64, f64)> = raw.iter().copied().zip(bias.iter().copied()).collect();
        anchors.sort_by(|a, b| a.0.total_cmp(&b.0));
        let k = NEIGHBORS.min(anchors.len());
        let windows = anchors.len() - k + 1;

        let window_bias: Vec<f64> = (0..windows)
            .map(|s| anchors[s..s + k].iter().map(|a| a.1).sum::<f64>() / k as f64)
            .collect();
        // Window s is nearest for raw in [ (a[s-1]+a[s+k-1])/2, (a[s]+a[s+k])/2 ).
        let breakpoints: Vec<f64> = (0..windows - 1)
            .map(|s| (anchors[s].0 + anchors[s + k].0) / 2.0)
            .collect();

        let mut envelope = Vec::with_capacity(windows);
        let mut best = f64::NEG_INFINITY;
        envelope.push(best);
        for s in 0..windows - 1 {
            best = best.max(breakpoints[s] - window_bias[s]);
            envelope.push(best);
        }
        Self {
            breakpoints,
            window_bias,
            envelope,
        }
    }

    pub(crate) fn for_precision(p: u8) -> &'static BiasCurve {
        static CURVES: OnceLock<Vec<BiasCurve>> = OnceLock::new();
        let curves = CURVES.get_or_init(|| {
            (MIN_PRECISION..=MAX_PRECISION)
                .map(|p| {
                    let i = (p - MIN_PRECISION) as usize;
                    BiasCurve::build(RAW_ESTIMATE_DATA[i], BIAS_DATA[i])
                })
                .collect()
        });
        &curves[(p - MIN_PRECISION) as usize]
    }

    /// Nearest-neighbour bias for `raw`.
    #[cfg(test)]
    pub(crate) fn bias(&self, raw: f64) -> f64 {
        self.window_bias[self.window(raw)]
    }

    /// Monotone bias-corrected estimate.
    pub(crate) fn corrected(&self, raw: f64) -> f64 {
        let s = self.window(raw);
        (raw - self.window_bias[s]).max(self.envelope[s])
    }

    fn window(&self, raw: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= raw)
    }
}

pub(crate) fn linear_counting_threshold(p: u8) -> f64 {
    LINEAR_COUNTING_THRESHOLD[(p - MIN_PRECISION) as usize]
}

#[cfg(test)]
mod tests {
    use super::*;

    // Brute-force k-nearest anchors, independent of the window bookkeeping.
    fn brute_bias(p: u8, raw: f64) -> f64 {
        let i = (p - MIN_PRECISION) as usize;
        let mut d: Vec<(f64, f64)> = RAW_ESTIMATE_DATA[i]
            .iter()
            .zip(BIAS_DATA[i])
            .map(|(&r, &b)| ((r - raw).abs(), b))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        d[..NEIGHBORS].iter().map(|x| x.1).sum::<f64>() / NEIGHBORS as f64
    }

    #[test]
    fn tables_are_aligned() {
        for (raw, bias) in RAW_ESTIMATE_DATA.iter().zip(BIAS_DATA) {
            assert_eq!(raw.len(), bias.len());
            assert!(raw.len() >= NEIGHBORS);
        }
        assert_eq!(RAW_ESTIMATE_DATA.len(), 15);
    }

    #[test]
    fn window_bias_matches_brute_force_away_from_ties() {
        for p in MIN_PRECISION..=MAX_PRECISION {
            let curve = BiasCurve::for_precision(p);
            let m = (1u64 << p) as f64;
            for j in 0..500 {
                // Irrational-ish step keeps probes off exact midpoints.
                let raw = 0.7 * m + j as f64 * m * 4.3 / 500.0 + 0.123_456;
                let a = curve.bias(raw);
                let b = brute_bias(p, raw);
                assert!((a - b).abs() < 1e-9, "p={p} raw={raw}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn corrected_estimate_is_monotone() {
        for p in MIN_PRECISION..=MAX_PRECISION {
            let curve = BiasCurve::for_precision(p);
            let m = (1u64 << p) as f64;
            let mut prev = f64::NEG_INFINITY;
            for j in 0..=50_000 {
                let raw = 0.5 * m + j as f64 * 5.0 * m / 50_000.0;
                let v = curve.corrected(raw);
                assert!(v >= prev, "p={p} raw={raw}: {v} < {prev}");
                prev = v;
            }
        }
    }
}
